// errors.hpp
#pragma once

#include <stdexcept>
#include <string>

namespace oscspec {

/// Invalid or inconsistent user configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// The request cannot be met under the stated constraints.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A numerical tolerance (truncation, norm) was violated.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace oscspec
