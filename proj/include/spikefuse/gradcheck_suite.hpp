#pragma once

#include <string>
#include <vector>

#include "spikefuse/gradcheck.hpp"

namespace spikefuse {

struct CheckOutcome {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Finite-difference verification of every differentiable operation plus
/// the fully fused pipeline. Spiking parameters are validated against the
/// surrogate chain instead (their forward is a step function, which finite
/// differences cannot probe), so the pipeline check excludes them.
/// `module_filter` (empty = all) selects by name substring.
std::vector<CheckOutcome> run_gradcheck_suite(const std::string& module_filter = "");

}  // namespace spikefuse
