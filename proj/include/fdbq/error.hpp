#pragma once

#include <stdexcept>
#include <string>

namespace fdbq {

// Failure categories; the CLI maps each to a distinct exit code.
enum class ErrorKind {
    invalid_argument,
    shape_mismatch,
    io,
    format,
    numeric,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace fdbq
