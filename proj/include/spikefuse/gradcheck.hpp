#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spikefuse/autodiff.hpp"

namespace spikefuse {

/// Builds a scalar loss from store-backed parameters. The builder must be a
/// pure function of the store contents.
using ScalarBuilder = std::function<Tape::Val(Forward&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    int worst_index = -1;
    int checked = 0;
};

struct GradCheckOptions {
    double eps = 1e-5;
    // Parameters whose analytic gradient is defined by a surrogate rather
    // than the true derivative; excluded from finite differencing.
    std::vector<std::string> skip_prefixes;
};

/// Central finite differences against the tape gradient for every trainable
/// scalar in the store. Relative error uses max(|a|,|b|,1e-8) as the
/// denominator. Throws OracleError if two evaluations at the same point
/// disagree (the function under test is not deterministic).
GradCheckResult grad_check(ParameterStore& store, const ScalarBuilder& build,
                           const GradCheckOptions& opts = {});

}  // namespace spikefuse
