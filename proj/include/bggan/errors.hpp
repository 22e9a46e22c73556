#pragma once

#include <stdexcept>
#include <string>

namespace bggan {

/// Bad inputs: shape mismatches, violated matrix invariants, malformed files.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical breakdown: eigensolver non-convergence, non-finite losses.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bggan
