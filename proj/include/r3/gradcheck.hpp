#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "r3/tape.hpp"

namespace r3 {

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-4;
    std::size_t max_coords = 64;  // sampled per parameter tensor; 0 checks every coordinate
    std::uint64_t seed = 0;
};

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double tol = 0.0;

    bool passed() const;
    double max_rel_error() const;
};

/// Builds the scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients with central differences.
///
/// Error per coordinate is |analytic - central| / max(1, |analytic|). Only
/// trainable parameters are checked. On return every parameter's grad holds
/// the analytic gradient and its value is unchanged.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                                  const GradCheckOptions& opts = {});

}  // namespace r3
