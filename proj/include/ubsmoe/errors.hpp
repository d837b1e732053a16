#pragma once

#include <stdexcept>
#include <string>

namespace ubsmoe {

// Invalid configuration or violated call contract (bad dimensions, bad
// hyperparameters, malformed config files). Maps to exit code 2 in the CLI.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure detected at runtime (NaN/Inf, undefined statistic).
// Maps to exit code 3 in the CLI.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ubsmoe
