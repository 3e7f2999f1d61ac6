#pragma once

#include <stdexcept>
#include <string>

namespace koopman {

// Base for every error the library raises deliberately. Callers that only
// need coarse handling can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Expression parsing: malformed input. Carries the byte offset into the
// source string where scanning stopped.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& msg, std::size_t position)
        : Error(msg + " (at position " + std::to_string(position) + ")"),
          pos_(position) {}
    std::size_t position() const noexcept { return pos_; }

private:
    std::size_t pos_;
};

// Expression parsing: identifier is neither a variable nor a known function.
class UnknownIdentifier : public Error {
public:
    using Error::Error;
};

// Expression parsing: variable index outside 1..d.
class IndexOutOfRange : public Error {
public:
    using Error::Error;
};

// Evaluation hit a point outside the expression's domain (divide by zero,
// sqrt of a negative, log of a nonpositive base for a real exponent).
class DomainError : public Error {
public:
    using Error::Error;
};

class UnknownSystem : public Error {
public:
    using Error::Error;
};

class ComplexEigenvalue : public Error {
public:
    using Error::Error;
};

class RepeatedEigenvalue : public Error {
public:
    using Error::Error;
};

class NonHyperbolic : public Error {
public:
    using Error::Error;
};

class InvalidDomain : public Error {
public:
    using Error::Error;
};

// Regularized Gram solve failed through every fallback.
class SingularSystem : public Error {
public:
    using Error::Error;
};

class EmptySet : public Error {
public:
    using Error::Error;
};

class DegenerateTruth : public Error {
public:
    using Error::Error;
};

// Trajectory state norm exceeded the blowup guard.
class Blowup : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace koopman
