#pragma once

#include "tempo/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

namespace tempo::binary {

// Little-endian encoding helpers shared by the model and raster containers.

class Writer {
public:
    void bytes(std::string_view s) { buf_.append(s); }

    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        if constexpr (std::is_floating_point_v<T>) {
            using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
            put(std::bit_cast<U>(v));
        } else {
            for (std::size_t i = 0; i < sizeof(T); ++i) {
                buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
            }
        }
    }

    [[nodiscard]] const std::string& data() const noexcept { return buf_; }
    std::string release() noexcept { return std::move(buf_); }
    void reserve(std::size_t n) { buf_.reserve(n); }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    void expect(std::string_view magic, const char* what) {
        const auto at = pos_;
        if (data_.size() - pos_ < magic.size() || data_.substr(pos_, magic.size()) != magic) {
            throw FormatError(std::string("bad ") + what + " magic", at);
        }
        pos_ += magic.size();
    }

    template <typename T>
    T get() {
        need(sizeof(T));
        if constexpr (std::is_floating_point_v<T>) {
            using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
            return std::bit_cast<T>(get<U>());
        } else {
            std::uint64_t v = 0;
            for (std::size_t i = 0; i < sizeof(T); ++i) {
                v |= std::uint64_t{static_cast<unsigned char>(data_[pos_ + i])} << (8 * i);
            }
            pos_ += sizeof(T);
            return static_cast<T>(v);
        }
    }

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw FormatError("truncated: need " + std::to_string(n) + " more bytes, have " +
                                  std::to_string(data_.size() - pos_),
                              pos_);
        }
    }

    [[nodiscard]] std::size_t offset() const noexcept { return pos_; }
    [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

} // namespace tempo::binary
