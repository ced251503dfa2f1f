#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace xilab {

/// Tensor/op shape violation; carries the offending dimension when known.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg, int dim = -1)
        : std::invalid_argument(msg), dim_(dim) {}
    int dim() const noexcept { return dim_; }

private:
    int dim_;
};

/// IDX file parse failure; carries the byte offset where parsing stopped.
class IdxParseError : public std::runtime_error {
public:
    IdxParseError(const std::string& msg, std::uint64_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset_(byte_offset) {}
    std::uint64_t byte_offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Bad run/training configuration detected before any work starts.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or unreadable data files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A training or evaluation job failed mid-run.
class RunError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace xilab
