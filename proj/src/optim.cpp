#include "spikefuse/optim.hpp"

#include <cmath>

namespace spikefuse {

double lr_schedule(double lr0, int epoch, double factor) {
    if (epoch < 0) throw ConfigError("epoch must be nonnegative");
    return lr0 * std::pow(factor, epoch);
}

void Adam::step(ParameterStore& store, const GradMap& grads,
                const std::function<double(const std::string&)>& lr_of) {
    for (const auto& [name, grad] : grads) {
        Tensor& param = store.at(name);
        if (!store.trainable(name)) continue;
        if (grad.size() != param.data.size())
            throw ShapeError("gradient size mismatch for " + name);
        Slot& slot = slots_[name];
        if (slot.m.empty()) {
            slot.m.assign(grad.size(), 0.0);
            slot.v.assign(grad.size(), 0.0);
        }
        ++slot.t;
        double lr = lr_of(name);
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(slot.t));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(slot.t));
        for (size_t i = 0; i < grad.size(); ++i) {
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * grad[i];
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace spikefuse
