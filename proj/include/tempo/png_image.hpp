#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace tempo {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB image, row-major, top row first.
struct RgbImage {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<std::uint8_t> pixels; ///< width * height * 3

    RgbImage() = default;
    RgbImage(std::uint32_t w, std::uint32_t h, Rgb fill = {0, 0, 0});

    [[nodiscard]] Rgb at(std::uint32_t x, std::uint32_t y) const;
    void set(std::uint32_t x, std::uint32_t y, Rgb c);
    /// Clipped Bresenham segment.
    void line(int x0, int y0, int x1, int y1, Rgb c);

    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

} // namespace tempo
