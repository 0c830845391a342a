#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <fmt/format.h>

namespace quma {

/// Failure category. Each maps to one CLI exit code.
enum class ErrorKind {
    Parse,    // malformed program, microprogram or config text
    Runtime,  // pipeline fault: bad memory access, missed event time, ...
    Budget,   // step budget exhausted
    Io,       // file could not be read or written
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Parse: return 2;
        case ErrorKind::Runtime: return 3;
        case ErrorKind::Budget: return 4;
        case ErrorKind::Io: return 5;
    }
    return 3;
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Parse diagnostic carrying the 1-based source line (0 when not tied to a line).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error(ErrorKind::Parse,
                line == 0 ? message : fmt::format("line {}: {}", line, message)),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

inline Error runtime_fault(const std::string& stage, const std::string& message) {
    return Error(ErrorKind::Runtime, fmt::format("{}: {}", stage, message));
}

}  // namespace quma
