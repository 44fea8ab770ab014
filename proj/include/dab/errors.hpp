#pragma once

#include <stdexcept>
#include <string>

namespace dab {

// Error taxonomy shared by the library and mapped to CLI exit codes
// (0 ok, 2 usage, 3 numeric, 4 format/io).
enum class ErrorKind {
    Shape,
    Bounds,
    DegenerateInput,
    Encoding,
    Size,
    Format,
    Io,
    Numeric,
    Config,
    State,
    Input,
    Usage,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

} // namespace dab
