#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace seep {

// Error taxonomy. Validation/shape/config problems are caller bugs or bad
// inputs; SolverError and NumericError signal numerical failure at runtime
// (the CLI maps the former group to exit 1 and the latter to exit 2).
struct ShapeError final : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError final : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError final : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SolverError final : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError final : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace seep
