#pragma once

#include <stdexcept>
#include <string>

namespace tempo {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller passed arguments outside an operation's domain.
class InputError : public Error {
public:
    using Error::Error;
};

/// Input data (files, records, label sets) cannot be used as given.
class DataError : public Error {
public:
    using Error::Error;
};

/// A binary container failed validation. Carries the byte offset of the fault.
class FormatError : public DataError {
public:
    FormatError(const std::string& what, std::size_t offset)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Invalid pipeline configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace tempo
