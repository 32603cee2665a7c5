#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spikefuse/tensor.hpp"

namespace spikefuse {

/// Reverse-mode tape. Every operation records a node holding the forward
/// value plus a backward closure that pulls the node's gradient and pushes
/// contributions into its parents. Nodes are created in topological order,
/// so the backward pass is a single reverse sweep.
class Tape {
public:
    struct Val {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    Val leaf(Tensor value, bool requires_grad);

    /// Valid only until the next node is pushed onto the tape.
    const Tensor& val(Val v) const { return node(v).value; }
    /// By value: creating nodes may reallocate and invalidate references.
    std::vector<int> shape(Val v) const { return node(v).value.shape; }
    bool requires_grad(Val v) const { return node(v).requires_grad; }

    /// Gradient buffer of a node (zeros until backward reaches it).
    const std::vector<double>& grad(Val v);

    /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. Root must
    /// be scalar.
    void backward(Val root);

    size_t size() const { return nodes_.size(); }
    /// Name of the first node holding a non-finite value, or empty string.
    std::string first_nonfinite() const;

    // ---- elementwise / structural ----
    Val add(Val a, Val b);
    Val sub(Val a, Val b);
    Val mul(Val a, Val b);
    Val scale(Val a, double s);
    Val relu(Val a);
    Val gelu(Val a);
    Val clamp01(Val a);
    Val reshape(Val a, std::vector<int> new_shape);
    Val transpose(Val a);                       // 2-D
    Val concat_rows(Val a, Val b);              // [N1xF ; N2xF] -> (N1+N2)xF
    Val concat_cols(Val a, Val b);              // [NxF1 , NxF2] -> Nx(F1+F2)
    Val slice_cols(Val a, int col0, int col1);  // NxF -> Nx(col1-col0)
    Val average(const std::vector<Val>& xs);    // elementwise mean of equal shapes
    Val mean_all(Val a);                        // -> scalar {1}
    Val weighted_sum(Val a, Tensor weights);    // -> scalar {1}
    Val rows_mul_vec(Val rows, Val vec);        // NxF  *  (1xF or F) broadcast

    // ---- linear algebra ----
    Val matmul(Val a, Val b);     // NxK . KxM
    Val matmul_bt(Val a, Val b);  // NxK . (MxK)^T
    Val linear(Val input, Val weight, Val bias);

    // ---- neural ops ----
    Val conv2d(Val input, Val kernel, Val bias, int stride, int padding);
    Val layer_norm(Val input, Val gain, Val offset, double eps = 1e-5);
    Val spatial_bn(Val input, Val gain, Val offset, double eps = 1e-5);
    Val softmax_rows(Val input);
    Val dropout(Val input, double rate, Rng& rng, bool training);

    // ---- spiking ----
    /// u = alpha * (1 - o_prev) * u_prev + syn
    Val lif_update(Val u_prev, Val o_prev, Val syn, double alpha);
    /// Heaviside spike with triangular surrogate derivative. `threshold`
    /// is a single-element tensor; its gradient is the negated surrogate sum.
    Val spike(Val membrane, Val threshold);

    // ---- heads support ----
    /// Mean of ramp-thresholded classification residuals squared; labels are
    /// fixed targets of the same shape.
    Val zeta_sq_mean(Val scores, Tensor labels);
    /// Average of GxG bilinear samples inside a box. `box` holds
    /// {cx, cy, w, h} in pixels; features are CxHxW at `stride` px/cell.
    Val box_pool(Val features, Val box, double stride, int grid);
    /// Bilinear resample of a CxHxW map onto an out_h x out_w grid covering
    /// the same extent; rows ordered row-major -> (out_h*out_w) x C.
    Val grid_sample_map(Val features, int out_h, int out_w);
    /// Non-overlapping pxp patches of a CxHxW map, row-major patch order,
    /// each flattened to width p*p*C with column index c*p*p + py*p + px.
    Val patchify(Val features, int p);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        std::function<void(Tape&)> backward;
        const char* op = "";
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;

    Node& node(Val v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& node(Val v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Val push(Tensor value, bool requires_grad, const char* op,
             std::function<void(Tape&)> backward);
    std::vector<double>& grad_buf(int id);
};

/// max(0, 1 - |x|): derivative used in place of the spike step during
/// backpropagation.
double surrogate_grad(double x);

/// Named map of parameters; iteration is lexicographic by id.
class ParameterStore {
public:
    struct Entry {
        Tensor tensor;
        bool trainable = true;
    };

    Tensor& create(const std::string& id, Tensor init, bool trainable = true);
    bool has(const std::string& id) const { return entries_.count(id) != 0; }
    Tensor& at(const std::string& id);
    const Tensor& at(const std::string& id) const;
    bool trainable(const std::string& id) const;
    void set_trainable(const std::string& id, bool trainable);
    size_t size() const { return entries_.size(); }
    int64_t total_scalars() const;

    template <typename F>
    void for_each(F&& fn) {
        for (auto& [id, entry] : entries_) fn(id, entry);
    }
    template <typename F>
    void for_each(F&& fn) const {
        for (const auto& [id, entry] : entries_) fn(id, entry);
    }

private:
    std::map<std::string, Entry> entries_;
};

using GradMap = std::map<std::string, std::vector<double>>;

/// One forward pass: a tape plus lazily bound parameter leaves. Reads the
/// store, never writes it.
struct Forward {
    Tape tape;
    const ParameterStore* store = nullptr;
    bool training = false;
    double dropout_rate = 0.0;
    Rng* rng = nullptr;
    std::map<std::string, Tape::Val> bound;

    explicit Forward(const ParameterStore& s, bool training_mode = false, Rng* rng_in = nullptr)
        : store(&s), training(training_mode), rng(rng_in) {}

    /// Bind a named parameter onto the tape (once per pass).
    Tape::Val p(const std::string& name);
    /// Constant input (no gradient).
    Tape::Val c(const Tensor& t) { return tape.leaf(t, false); }
    /// Dropout with the pass-wide rate; identity when not training.
    Tape::Val drop(Tape::Val v);

    /// Collect d(root)/d(param) for every bound trainable parameter.
    GradMap pull_grads();
};

}  // namespace spikefuse
