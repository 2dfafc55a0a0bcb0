#pragma once

#include <stdexcept>
#include <string>

namespace lsocv {

// Bad input: parameters out of range, malformed data, inconsistent dimensions.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A well-formed problem that cannot be solved numerically.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SingularSystemError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// Working correlation block too close to singular to be used as a weight.
class NearSingularError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

// I - A_ii is (numerically) singular: the subject fully determines its own fit.
class LeverageSaturationError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace lsocv
