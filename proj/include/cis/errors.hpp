#pragma once

#include <stdexcept>
#include <string>

namespace cis {

enum class ErrorKind {
    validation,
    factorization,
    degeneracy,
    non_convergence,
    io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class FactorizationError : public Error {
public:
    explicit FactorizationError(const std::string& what) : Error(ErrorKind::factorization, what) {}
};

/// Weight degeneracy. Carries the effective sample size that triggered it so
/// callers can decide to switch to a tempered construction.
class DegeneracyError : public Error {
public:
    DegeneracyError(const std::string& what, double ess);
    double ess() const noexcept { return ess_; }

private:
    double ess_;
};

class NonConvergenceError : public Error {
public:
    explicit NonConvergenceError(const std::string& what) : Error(ErrorKind::non_convergence, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace cis
