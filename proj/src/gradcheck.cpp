#include "spikefuse/gradcheck.hpp"

#include <cmath>

namespace spikefuse {

namespace {

double eval_scalar(ParameterStore& store, const ScalarBuilder& build) {
    Forward fwd(store, false, nullptr);
    Tape::Val root = build(fwd);
    const Tensor& v = fwd.tape.val(root);
    if (v.numel() != 1) throw ShapeError("grad_check expects a scalar objective");
    return v.data[0];
}

bool skipped(const std::string& name, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) return true;
    return false;
}

}  // namespace

GradCheckResult grad_check(ParameterStore& store, const ScalarBuilder& build,
                           const GradCheckOptions& opts) {
    if (opts.eps < 1e-7 || opts.eps > 1e-3)
        throw ConfigError("grad_check eps must lie in [1e-7, 1e-3]");

    double base = eval_scalar(store, build);
    double again = eval_scalar(store, build);
    if (base != again)
        throw OracleError("objective is not deterministic under repeated evaluation");

    // Analytic gradients from one backward pass.
    Forward fwd(store, false, nullptr);
    Tape::Val root = build(fwd);
    fwd.tape.backward(root);
    GradMap analytic = fwd.pull_grads();

    GradCheckResult result;
    store.for_each([&](const std::string& name, ParameterStore::Entry& entry) {
        if (!entry.trainable) return;  // frozen parameters are not part of the check set
        if (skipped(name, opts.skip_prefixes)) return;
        auto it = analytic.find(name);
        const std::vector<double>* grad = it == analytic.end() ? nullptr : &it->second;
        for (int64_t i = 0; i < entry.tensor.numel(); ++i) {
            double saved = entry.tensor.data[static_cast<size_t>(i)];
            entry.tensor.data[static_cast<size_t>(i)] = saved + opts.eps;
            double up = eval_scalar(store, build);
            entry.tensor.data[static_cast<size_t>(i)] = saved - opts.eps;
            double down = eval_scalar(store, build);
            entry.tensor.data[static_cast<size_t>(i)] = saved;

            double fd = (up - down) / (2.0 * opts.eps);
            double an = grad ? (*grad)[static_cast<size_t>(i)] : 0.0;
            double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
            double rel = std::fabs(fd - an) / denom;
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name;
                result.worst_index = static_cast<int>(i);
            }
        }
    });
    return result;
}

}  // namespace spikefuse
