#pragma once

#include <stdexcept>
#include <string>

namespace srot {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input (files, configs, measures, plans).
class InputError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure did not produce a usable answer.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// The Hamiltonian flow left the configured chart bound.
class IntegrationBlowUp : public NumericalError {
public:
    IntegrationBlowUp(const std::string& what, double escape_time)
        : NumericalError(what), escape_time_(escape_time) {}

    double escape_time() const noexcept { return escape_time_; }

private:
    double escape_time_;
};

/// No multistart branch of the shooting solver reached the target.
class ConnectionFailure : public NumericalError {
public:
    ConnectionFailure(const std::string& what, double best_residual)
        : NumericalError(what), best_residual_(best_residual) {}

    double best_residual() const noexcept { return best_residual_; }

private:
    double best_residual_;
};

}  // namespace srot
