#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ipcal {

/// Rejected input: bad dimensions, malformed files, invalid configuration.
/// Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state or costate, degenerate geometry. Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, std::ptrdiff_t step = -1)
        : std::runtime_error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what),
          step_(step) {}

    std::ptrdiff_t step() const noexcept { return step_; }

private:
    std::ptrdiff_t step_;
};

/// Two interacting points coincide; the pair direction is undefined.
class DegeneratePairError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

} // namespace ipcal
