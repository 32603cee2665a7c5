#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spikefuse/autodiff.hpp"

namespace spikefuse {

/// lr0 * factor^epoch
double lr_schedule(double lr0, int epoch, double factor);

/// First/second-moment adaptive updates with bias correction. Moments are
/// keyed by parameter id and created lazily at zero.
class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    /// Applies one step to every parameter present in `grads`; `lr_of`
    /// supplies the learning rate per parameter (rate groups).
    void step(ParameterStore& store, const GradMap& grads,
              const std::function<double(const std::string&)>& lr_of);

    void step(ParameterStore& store, const GradMap& grads, double lr) {
        step(store, grads, [lr](const std::string&) { return lr; });
    }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
        int64_t t = 0;
    };
    double beta1_, beta2_, eps_;
    std::map<std::string, Slot> slots_;
};

}  // namespace spikefuse
