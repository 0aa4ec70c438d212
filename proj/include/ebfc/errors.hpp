#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ebfc {

/// Malformed textual input (netlists, geometry files, Matrix Market files).
/// Carries a 1-based line and column when they are known (0 otherwise).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& message, std::size_t line = 0, std::size_t column = 0)
        : std::runtime_error(format(message, line, column)),
          message_(message), line_(line), column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }
    const std::string& bare_message() const noexcept { return message_; }

private:
    static std::string format(const std::string& message, std::size_t line, std::size_t column) {
        if (line == 0) return message;
        std::string out = message + " at line " + std::to_string(line);
        if (column != 0) out += ", column " + std::to_string(column);
        return out;
    }

    std::string message_;
    std::size_t line_;
    std::size_t column_;
};

/// A model violates a structural requirement: dimensions, skew-symmetry,
/// semi-definiteness, incidence topology, port bindings.
class StructureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical operation failed (singular stage matrix, inconsistent
/// initial value, column-space violation in a pseudo-inverse solve).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& message, long step = -1)
        : std::runtime_error(step < 0 ? message : message + " (step " + std::to_string(step) + ")"),
          step_(step) {}

    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace ebfc
