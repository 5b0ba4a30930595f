#pragma once

#include <stdexcept>

namespace tarma {

/// Bad input or configuration: malformed data, out-of-range settings,
/// too few observations for the requested model.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// The numerics broke down: divergent recursion, singular normal equations,
/// non-finite objective, ill-conditioned sensitivity matrix.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace tarma
