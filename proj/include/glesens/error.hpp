#pragma once

#include <stdexcept>
#include <string>

namespace glesens {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad dt, empty series, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A parameter perturbation left the admissible set, e.g. c_k - eps < 0.
class AdmissibilityError : public Error {
public:
    AdmissibilityError(std::string parameter, const std::string& what)
        : Error(what), parameter_(std::move(parameter)) {}

    const std::string& parameter() const noexcept { return parameter_; }

private:
    std::string parameter_;
};

/// Malformed or incomplete experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite intermediate values or a failed internal consistency check.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// The Langevin drift matrix has a repeated eigenvalue (beta == 2 omega).
class CriticallyDamped : public Error {
public:
    using Error::Error;
};

}  // namespace glesens
