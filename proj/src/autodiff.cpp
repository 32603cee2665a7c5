#include "spikefuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace spikefuse {

double surrogate_grad(double x) { return std::max(0.0, 1.0 - std::fabs(x)); }

// ---------------------------------------------------------------- tape core

Tape::Val Tape::leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, "leaf", nullptr);
}

Tape::Val Tape::push(Tensor value, bool requires_grad, const char* op,
                     std::function<void(Tape&)> backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Val{static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), 0.0);
    return n.grad;
}

const std::vector<double>& Tape::grad(Val v) { return grad_buf(v.id); }

void Tape::backward(Val root) {
    if (!root.valid()) throw ShapeError("backward on invalid value");
    Node& r = node(root);
    if (r.value.numel() != 1)
        throw ShapeError("backward root must be scalar, got " + shape_str(r.value.shape));
    grad_buf(root.id)[0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.backward && n.requires_grad && !n.grad.empty()) n.backward(*this);
    }
}

std::string Tape::first_nonfinite() const {
    for (const Node& n : nodes_)
        if (!n.value.all_finite()) return n.op;
    return "";
}

// ------------------------------------------------------------- elementwise

Tape::Val Tape::add(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw ShapeError("add " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "add", [self, ia, ib](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

Tape::Val Tape::sub(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw ShapeError("sub " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "sub", [self, ia, ib](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tape::Val Tape::mul(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw ShapeError("mul " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "mul", [self, ia, ib](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& da = t.nodes_[ia].value.data;
        const auto& db = t.nodes_[ib].value.data;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * db[i];
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * da[i];
        }
    });
}

Tape::Val Tape::scale(Val a, double s) {
    Tensor out = val(a);
    for (double& v : out.data) v *= s;
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "scale", [self, ia, s](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buf(ia);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
}

Tape::Val Tape::relu(Val a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "relu", [self, ia](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        const auto& x = t.nodes_[ia].value.data;
        auto& ga = t.grad_buf(ia);
        for (size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) ga[i] += g[i];
    });
}

Tape::Val Tape::gelu(Val a) {
    static const double kInvSqrt2 = 0.7071067811865475244;
    static const double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = val(a);
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "gelu", [self, ia](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        const auto& x = t.nodes_[ia].value.data;
        auto& ga = t.grad_buf(ia);
        for (size_t i = 0; i < g.size(); ++i) {
            double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
            ga[i] += g[i] * (cdf + x[i] * pdf);
        }
    });
}

Tape::Val Tape::clamp01(Val a) {
    Tensor out = val(a);
    for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "clamp01", [self, ia](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        const auto& x = t.nodes_[ia].value.data;
        auto& ga = t.grad_buf(ia);
        for (size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0 && x[i] < 1.0) ga[i] += g[i];
    });
}

// -------------------------------------------------------------- structural

Tape::Val Tape::reshape(Val a, std::vector<int> new_shape) {
    Tensor out = val(a).reshaped(std::move(new_shape));
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "reshape", [self, ia](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buf(ia);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Tape::Val Tape::transpose(Val a) {
    const Tensor& ta = val(a);
    if (ta.ndim() != 2) throw ShapeError("transpose expects 2-D, got " + shape_str(ta.shape));
    int n = ta.shape[0], m = ta.shape[1];
    Tensor out({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(j, i) = ta.at(i, j);
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "transpose", [self, ia, n, m](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buf(ia);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j)
                ga[static_cast<size_t>(i) * m + j] += g[static_cast<size_t>(j) * n + i];
    });
}

Tape::Val Tape::concat_rows(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[1])
        throw ShapeError("concat_rows " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    int na = ta.shape[0], nb = tb.shape[0], f = ta.shape[1];
    Tensor out({na + nb, f});
    std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + ta.data.size());
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    size_t split = ta.data.size();
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "concat_rows", [self, ia, ib, split](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < split; ++i) ga[i] += g[i];
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            for (size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
        }
    });
}

Tape::Val Tape::concat_cols(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[0] != tb.shape[0])
        throw ShapeError("concat_cols " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    int n = ta.shape[0], fa = ta.shape[1], fb = tb.shape[1];
    Tensor out({n, fa + fb});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < fa; ++j) out.at(i, j) = ta.at(i, j);
        for (int j = 0; j < fb; ++j) out.at(i, fa + j) = tb.at(i, j);
    }
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "concat_cols", [self, ia, ib, n, fa, fb](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        int w = fa + fb;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < fa; ++j)
                    ga[static_cast<size_t>(i) * fa + j] += g[static_cast<size_t>(i) * w + j];
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < fb; ++j)
                    gb[static_cast<size_t>(i) * fb + j] += g[static_cast<size_t>(i) * w + fa + j];
        }
    });
}

Tape::Val Tape::slice_cols(Val a, int col0, int col1) {
    const Tensor& ta = val(a);
    if (ta.ndim() != 2) throw ShapeError("slice_cols expects 2-D");
    int n = ta.shape[0], f = ta.shape[1];
    if (col0 < 0 || col1 > f || col0 >= col1)
        throw ShapeError("slice_cols range [" + std::to_string(col0) + "," +
                         std::to_string(col1) + ") of width " + std::to_string(f));
    int w = col1 - col0;
    Tensor out({n, w});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) out.at(i, j) = ta.at(i, col0 + j);
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "slice_cols", [self, ia, n, f, col0, w](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& ga = t.grad_buf(ia);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < w; ++j)
                ga[static_cast<size_t>(i) * f + col0 + j] += g[static_cast<size_t>(i) * w + j];
    });
}

Tape::Val Tape::average(const std::vector<Val>& xs) {
    if (xs.empty()) throw ConfigError("average of empty list");
    const Tensor& first = val(xs[0]);
    Tensor out = first;
    bool req = requires_grad(xs[0]);
    for (size_t k = 1; k < xs.size(); ++k) {
        const Tensor& tk = val(xs[k]);
        if (!tk.same_shape(first))
            throw ShapeError("average shape mismatch at element " + std::to_string(k));
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tk.data[i];
        req = req || requires_grad(xs[k]);
    }
    double inv = 1.0 / static_cast<double>(xs.size());
    for (double& v : out.data) v *= inv;
    std::vector<int> ids;
    ids.reserve(xs.size());
    for (Val v : xs) ids.push_back(v.id);
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "average", [self, ids, inv](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        for (int id : ids) {
            if (!t.nodes_[static_cast<size_t>(id)].requires_grad) continue;
            auto& gi = t.grad_buf(id);
            for (size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * inv;
        }
    });
}

Tape::Val Tape::mean_all(Val a) {
    const Tensor& ta = val(a);
    double sum = 0.0;
    for (double v : ta.data) sum += v;
    double inv = 1.0 / static_cast<double>(ta.numel());
    Tensor out({1});
    out.data[0] = sum * inv;
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(a), "mean_all", [self, ia, inv](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        double g = t.nodes_[self].grad[0] * inv;
        auto& ga = t.grad_buf(ia);
        for (double& v : ga) v += g;
    });
}

Tape::Val Tape::weighted_sum(Val a, Tensor weights) {
    const Tensor& ta = val(a);
    if (ta.numel() != weights.numel())
        throw ShapeError("weighted_sum size mismatch");
    double sum = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i) sum += ta.data[i] * weights.data[i];
    Tensor out({1});
    out.data[0] = sum;
    int ia = a.id;
    int self = static_cast<int>(nodes_.size());
    auto w = std::make_shared<std::vector<double>>(std::move(weights.data));
    return push(std::move(out), requires_grad(a), "weighted_sum", [self, ia, w](Tape& t) {
        if (!t.nodes_[ia].requires_grad) return;
        double g = t.nodes_[self].grad[0];
        auto& ga = t.grad_buf(ia);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * (*w)[i];
    });
}

Tape::Val Tape::rows_mul_vec(Val rows, Val vec) {
    const Tensor& tr = val(rows);
    const Tensor& tv = val(vec);
    if (tr.ndim() != 2) throw ShapeError("rows_mul_vec expects 2-D rows");
    int n = tr.shape[0], f = tr.shape[1];
    if (tv.numel() != f)
        throw ShapeError("rows_mul_vec width " + std::to_string(f) + " vs vec " +
                         std::to_string(tv.numel()));
    Tensor out({n, f});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) out.at(i, j) = tr.at(i, j) * tv.data[static_cast<size_t>(j)];
    bool req = requires_grad(rows) || requires_grad(vec);
    int ir = rows.id, iv = vec.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "rows_mul_vec", [self, ir, iv, n, f](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& r = t.nodes_[ir].value.data;
        const auto& v = t.nodes_[iv].value.data;
        if (t.nodes_[ir].requires_grad) {
            auto& gr = t.grad_buf(ir);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < f; ++j)
                    gr[static_cast<size_t>(i) * f + j] += g[static_cast<size_t>(i) * f + j] * v[static_cast<size_t>(j)];
        }
        if (t.nodes_[iv].requires_grad) {
            auto& gv = t.grad_buf(iv);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < f; ++j)
                    gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * f + j] * r[static_cast<size_t>(i) * f + j];
        }
    });
}

// ----------------------------------------------------------- linear algebra

Tape::Val Tape::matmul(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[0])
        throw ShapeError("matmul " + shape_str(ta.shape) + " . " + shape_str(tb.shape));
    int n = ta.shape[0], k = ta.shape[1], m = tb.shape[1];
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            double aik = ta.at(i, kk);
            if (aik == 0.0) continue;
            const double* brow = &tb.data[static_cast<size_t>(kk) * m];
            double* orow = &out.data[static_cast<size_t>(i) * m];
            for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "matmul", [self, ia, ib, n, k, m](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& da = t.nodes_[ia].value.data;
        const auto& db = t.nodes_[ib].value.data;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            // dA = G . B^T
            for (int i = 0; i < n; ++i)
                for (int kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* grow = &g[static_cast<size_t>(i) * m];
                    const double* brow = &db[static_cast<size_t>(kk) * m];
                    for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    ga[static_cast<size_t>(i) * k + kk] += acc;
                }
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            // dB = A^T . G
            for (int kk = 0; kk < k; ++kk)
                for (int i = 0; i < n; ++i) {
                    double aik = da[static_cast<size_t>(i) * k + kk];
                    if (aik == 0.0) continue;
                    const double* grow = &g[static_cast<size_t>(i) * m];
                    double* brow = &gb[static_cast<size_t>(kk) * m];
                    for (int j = 0; j < m; ++j) brow[j] += aik * grow[j];
                }
        }
    });
}

Tape::Val Tape::matmul_bt(Val a, Val b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.shape[1] != tb.shape[1])
        throw ShapeError("matmul_bt " + shape_str(ta.shape) + " . " + shape_str(tb.shape) + "^T");
    int n = ta.shape[0], k = ta.shape[1], m = tb.shape[0];
    Tensor out({n, m});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            const double* arow = &ta.data[static_cast<size_t>(i) * k];
            const double* brow = &tb.data[static_cast<size_t>(j) * k];
            for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            out.at(i, j) = acc;
        }
    bool req = requires_grad(a) || requires_grad(b);
    int ia = a.id, ib = b.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "matmul_bt", [self, ia, ib, n, k, m](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& da = t.nodes_[ia].value.data;
        const auto& db = t.nodes_[ib].value.data;
        if (t.nodes_[ia].requires_grad) {
            auto& ga = t.grad_buf(ia);
            // dA = G . B
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) {
                    double gij = g[static_cast<size_t>(i) * m + j];
                    if (gij == 0.0) continue;
                    const double* brow = &db[static_cast<size_t>(j) * k];
                    double* arow = &ga[static_cast<size_t>(i) * k];
                    for (int kk = 0; kk < k; ++kk) arow[kk] += gij * brow[kk];
                }
        }
        if (t.nodes_[ib].requires_grad) {
            auto& gb = t.grad_buf(ib);
            // dB = G^T . A
            for (int j = 0; j < m; ++j)
                for (int i = 0; i < n; ++i) {
                    double gij = g[static_cast<size_t>(i) * m + j];
                    if (gij == 0.0) continue;
                    const double* arow = &da[static_cast<size_t>(i) * k];
                    double* brow = &gb[static_cast<size_t>(j) * k];
                    for (int kk = 0; kk < k; ++kk) brow[kk] += gij * arow[kk];
                }
        }
    });
}

Tape::Val Tape::linear(Val input, Val weight, Val bias) {
    const Tensor& x = val(input);
    const Tensor& w = val(weight);
    const Tensor& b = val(bias);
    if (x.ndim() != 2 || w.ndim() != 2)
        throw ShapeError("linear expects 2-D input and weight");
    if (x.shape[1] != w.shape[0])
        throw ShapeError("linear inner dims " + shape_str(x.shape) + " . " + shape_str(w.shape));
    int n = x.shape[0], fin = x.shape[1], fout = w.shape[1];
    if (b.numel() != fout)
        throw ShapeError("linear bias length " + std::to_string(b.numel()) + " vs " +
                         std::to_string(fout));
    Tensor out({n, fout});
    for (int i = 0; i < n; ++i) {
        double* orow = &out.data[static_cast<size_t>(i) * fout];
        for (int j = 0; j < fout; ++j) orow[j] = b.data[static_cast<size_t>(j)];
        for (int kk = 0; kk < fin; ++kk) {
            double xik = x.at(i, kk);
            if (xik == 0.0) continue;
            const double* wrow = &w.data[static_cast<size_t>(kk) * fout];
            for (int j = 0; j < fout; ++j) orow[j] += xik * wrow[j];
        }
    }
    bool req = requires_grad(input) || requires_grad(weight) || requires_grad(bias);
    int ix = input.id, iw = weight.id, ib2 = bias.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "linear", [self, ix, iw, ib2, n, fin, fout](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& dx = t.nodes_[ix].value.data;
        const auto& dw = t.nodes_[iw].value.data;
        if (t.nodes_[ix].requires_grad) {
            auto& gx = t.grad_buf(ix);
            for (int i = 0; i < n; ++i)
                for (int kk = 0; kk < fin; ++kk) {
                    double acc = 0.0;
                    const double* grow = &g[static_cast<size_t>(i) * fout];
                    const double* wrow = &dw[static_cast<size_t>(kk) * fout];
                    for (int j = 0; j < fout; ++j) acc += grow[j] * wrow[j];
                    gx[static_cast<size_t>(i) * fin + kk] += acc;
                }
        }
        if (t.nodes_[iw].requires_grad) {
            auto& gw = t.grad_buf(iw);
            for (int kk = 0; kk < fin; ++kk)
                for (int i = 0; i < n; ++i) {
                    double xik = dx[static_cast<size_t>(i) * fin + kk];
                    if (xik == 0.0) continue;
                    const double* grow = &g[static_cast<size_t>(i) * fout];
                    double* wrow = &gw[static_cast<size_t>(kk) * fout];
                    for (int j = 0; j < fout; ++j) wrow[j] += xik * grow[j];
                }
        }
        if (t.nodes_[ib2].requires_grad) {
            auto& gb = t.grad_buf(ib2);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < fout; ++j)
                    gb[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * fout + j];
        }
    });
}

// ---------------------------------------------------------------- conv2d

Tape::Val Tape::conv2d(Val input, Val kernel, Val bias, int stride, int padding) {
    const Tensor& x = val(input);
    const Tensor& k = val(kernel);
    const Tensor& b = val(bias);
    if (x.ndim() != 3 || k.ndim() != 4)
        throw ShapeError("conv2d expects CxHxW input and OxCxKxK kernel");
    int cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    int cout = k.shape[0], kcin = k.shape[1], kh = k.shape[2], kw = k.shape[3];
    if (kcin != cin)
        throw ShapeError("conv2d input channels " + std::to_string(cin) + " vs kernel " +
                         std::to_string(kcin));
    if (kh != kw) throw ShapeError("conv2d kernel must be square");
    if (stride <= 0) throw ConfigError("conv2d stride must be positive");
    if (padding < 0) throw ConfigError("conv2d padding must be nonnegative");
    if (kh > h + 2 * padding || kw > w + 2 * padding)
        throw ShapeError("conv2d kernel larger than padded input");
    if (b.numel() != cout)
        throw ShapeError("conv2d bias length " + std::to_string(b.numel()));
    int oh = (h + 2 * padding - kh) / stride + 1;
    int ow = (w + 2 * padding - kw) / stride + 1;

    Tensor out({cout, oh, ow});
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = b.data[static_cast<size_t>(co)];
                int iy0 = oy * stride - padding;
                int ix0 = ox * stride - padding;
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ix0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += x.at(ci, iy, ix) * k.at4(co, ci, ky, kx);
                        }
                    }
                out.at(co, oy, ox) = acc;
            }
        }
    }
    bool req = requires_grad(input) || requires_grad(kernel) || requires_grad(bias);
    int ix_id = input.id, ik = kernel.id, ib2 = bias.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "conv2d",
                [self, ix_id, ik, ib2, cin, h, w, cout, kh, kw, oh, ow, stride, padding](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const Tensor& x = t.nodes_[ix_id].value;
        const Tensor& k = t.nodes_[ik].value;
        bool want_x = t.nodes_[ix_id].requires_grad;
        bool want_k = t.nodes_[ik].requires_grad;
        bool want_b = t.nodes_[ib2].requires_grad;
        std::vector<double>* gx = want_x ? &t.grad_buf(ix_id) : nullptr;
        std::vector<double>* gk = want_k ? &t.grad_buf(ik) : nullptr;
        std::vector<double>* gb = want_b ? &t.grad_buf(ib2) : nullptr;
        for (int co = 0; co < cout; ++co) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double go = g[(static_cast<size_t>(co) * oh + oy) * ow + ox];
                    if (go == 0.0) continue;
                    if (gb) (*gb)[static_cast<size_t>(co)] += go;
                    int iy0 = oy * stride - padding;
                    int ix0 = ox * stride - padding;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky) {
                            int iy = iy0 + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                int ix = ix0 + kx;
                                if (ix < 0 || ix >= w) continue;
                                size_t xoff = (static_cast<size_t>(ci) * h + iy) * w + ix;
                                size_t koff = ((static_cast<size_t>(co) * cin + ci) * kh + ky) * kw + kx;
                                if (gx) (*gx)[xoff] += go * k.data[koff];
                                if (gk) (*gk)[koff] += go * x.data[xoff];
                            }
                        }
                }
            }
        }
    });
}

// ------------------------------------------------------------ normalization

Tape::Val Tape::layer_norm(Val input, Val gain, Val offset, double eps) {
    const Tensor& x = val(input);
    const Tensor& g_ = val(gain);
    const Tensor& o_ = val(offset);
    if (x.ndim() != 2) throw ShapeError("layer_norm expects 2-D input");
    int n = x.shape[0], f = x.shape[1];
    if (f < 1) throw ShapeError("layer_norm needs at least one feature");
    if (g_.numel() != f || o_.numel() != f)
        throw ShapeError("layer_norm gain/offset width " + std::to_string(f));

    Tensor out({n, f});
    // Saved for backward: normalized rows and inverse stddev per row.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(n) * f);
    auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = &x.data[static_cast<size_t>(i) * f];
        double mean = 0.0;
        for (int j = 0; j < f; ++j) mean += row[j];
        mean /= f;
        double var = 0.0;
        for (int j = 0; j < f; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= f;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv)[static_cast<size_t>(i)] = is;
        for (int j = 0; j < f; ++j) {
            double xh = (row[j] - mean) * is;
            (*xhat)[static_cast<size_t>(i) * f + j] = xh;
            out.at(i, j) = g_.data[static_cast<size_t>(j)] * xh + o_.data[static_cast<size_t>(j)];
        }
    }
    bool req = requires_grad(input) || requires_grad(gain) || requires_grad(offset);
    int ix = input.id, ig = gain.id, io = offset.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "layer_norm",
                [self, ix, ig, io, n, f, xhat, inv](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& gain = t.nodes_[ig].value.data;
        bool want_x = t.nodes_[ix].requires_grad;
        bool want_g = t.nodes_[ig].requires_grad;
        bool want_o = t.nodes_[io].requires_grad;
        std::vector<double>* gx = want_x ? &t.grad_buf(ix) : nullptr;
        std::vector<double>* gg = want_g ? &t.grad_buf(ig) : nullptr;
        std::vector<double>* go = want_o ? &t.grad_buf(io) : nullptr;
        for (int i = 0; i < n; ++i) {
            const double* grow = &g[static_cast<size_t>(i) * f];
            const double* xh = &(*xhat)[static_cast<size_t>(i) * f];
            if (gg)
                for (int j = 0; j < f; ++j) (*gg)[static_cast<size_t>(j)] += grow[j] * xh[j];
            if (go)
                for (int j = 0; j < f; ++j) (*go)[static_cast<size_t>(j)] += grow[j];
            if (gx) {
                double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
                for (int j = 0; j < f; ++j) {
                    double dxh = grow[j] * gain[static_cast<size_t>(j)];
                    m1 += dxh;
                    m2 += dxh * xh[j];
                }
                m1 /= f;
                m2 /= f;
                double is = (*inv)[static_cast<size_t>(i)];
                for (int j = 0; j < f; ++j) {
                    double dxh = grow[j] * gain[static_cast<size_t>(j)];
                    (*gx)[static_cast<size_t>(i) * f + j] += is * (dxh - m1 - xh[j] * m2);
                }
            }
        }
    });
}

Tape::Val Tape::spatial_bn(Val input, Val gain, Val offset, double eps) {
    const Tensor& x = val(input);
    if (x.ndim() != 3) throw ShapeError("spatial_bn expects CxHxW input");
    int c = x.shape[0], h = x.shape[1], w = x.shape[2];
    const Tensor& g_ = val(gain);
    const Tensor& o_ = val(offset);
    if (g_.numel() != c || o_.numel() != c)
        throw ShapeError("spatial_bn gain/offset length " + std::to_string(c));
    int hw = h * w;
    // Same math as layer_norm with channels as rows and a scalar affine per
    // channel.
    Tensor out({c, h, w});
    auto xhat = std::make_shared<std::vector<double>>(x.data.size());
    auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
    for (int ci = 0; ci < c; ++ci) {
        const double* plane = &x.data[static_cast<size_t>(ci) * hw];
        double mean = 0.0;
        for (int i = 0; i < hw; ++i) mean += plane[i];
        mean /= hw;
        double var = 0.0;
        for (int i = 0; i < hw; ++i) {
            double d = plane[i] - mean;
            var += d * d;
        }
        var /= hw;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv)[static_cast<size_t>(ci)] = is;
        for (int i = 0; i < hw; ++i) {
            double xh = (plane[i] - mean) * is;
            (*xhat)[static_cast<size_t>(ci) * hw + i] = xh;
            out.data[static_cast<size_t>(ci) * hw + i] =
                g_.data[static_cast<size_t>(ci)] * xh + o_.data[static_cast<size_t>(ci)];
        }
    }
    bool req = requires_grad(input) || requires_grad(gain) || requires_grad(offset);
    int ix = input.id, ig = gain.id, io = offset.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "spatial_bn",
                [self, ix, ig, io, c, hw, xhat, inv](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& gain = t.nodes_[ig].value.data;
        bool want_x = t.nodes_[ix].requires_grad;
        std::vector<double>* gx = want_x ? &t.grad_buf(ix) : nullptr;
        std::vector<double>* gg = t.nodes_[ig].requires_grad ? &t.grad_buf(ig) : nullptr;
        std::vector<double>* go = t.nodes_[io].requires_grad ? &t.grad_buf(io) : nullptr;
        for (int ci = 0; ci < c; ++ci) {
            const double* grow = &g[static_cast<size_t>(ci) * hw];
            const double* xh = &(*xhat)[static_cast<size_t>(ci) * hw];
            if (gg) {
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) acc += grow[i] * xh[i];
                (*gg)[static_cast<size_t>(ci)] += acc;
            }
            if (go) {
                double acc = 0.0;
                for (int i = 0; i < hw; ++i) acc += grow[i];
                (*go)[static_cast<size_t>(ci)] += acc;
            }
            if (gx) {
                double gamma = gain[static_cast<size_t>(ci)];
                double m1 = 0.0, m2 = 0.0;
                for (int i = 0; i < hw; ++i) {
                    double dxh = grow[i] * gamma;
                    m1 += dxh;
                    m2 += dxh * xh[i];
                }
                m1 /= hw;
                m2 /= hw;
                double is = (*inv)[static_cast<size_t>(ci)];
                for (int i = 0; i < hw; ++i) {
                    double dxh = grow[i] * gamma;
                    (*gx)[static_cast<size_t>(ci) * hw + i] += is * (dxh - m1 - xh[i] * m2);
                }
            }
        }
    });
}

Tape::Val Tape::softmax_rows(Val input) {
    const Tensor& x = val(input);
    if (x.ndim() != 2) throw ShapeError("softmax_rows expects 2-D input");
    int n = x.shape[0], m = x.shape[1];
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        const double* row = &x.data[static_cast<size_t>(i) * m];
        double mx = row[0];
        for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        double* orow = &out.data[static_cast<size_t>(i) * m];
        for (int j = 0; j < m; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        double is = 1.0 / sum;
        for (int j = 0; j < m; ++j) orow[j] *= is;
    }
    int ix = input.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(input), "softmax_rows", [self, ix, n, m](Tape& t) {
        if (!t.nodes_[ix].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        const auto& y = t.nodes_[self].value.data;
        auto& gx = t.grad_buf(ix);
        for (int i = 0; i < n; ++i) {
            const double* grow = &g[static_cast<size_t>(i) * m];
            const double* yrow = &y[static_cast<size_t>(i) * m];
            double dot = 0.0;
            for (int j = 0; j < m; ++j) dot += grow[j] * yrow[j];
            for (int j = 0; j < m; ++j)
                gx[static_cast<size_t>(i) * m + j] += yrow[j] * (grow[j] - dot);
        }
    });
}

Tape::Val Tape::dropout(Val input, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
    if (!training || rate == 0.0) return input;
    const Tensor& x = val(input);
    auto mask = std::make_shared<std::vector<double>>(x.data.size());
    double keep = 1.0 - rate;
    double up = 1.0 / keep;
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i) {
        double m = rng.uniform() >= rate ? up : 0.0;
        (*mask)[i] = m;
        out.data[i] *= m;
    }
    int ix = input.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(input), "dropout", [self, ix, mask](Tape& t) {
        if (!t.nodes_[ix].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& gx = t.grad_buf(ix);
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
}

// ------------------------------------------------------------------ spiking

Tape::Val Tape::lif_update(Val u_prev, Val o_prev, Val syn, double alpha) {
    const Tensor& u = val(u_prev);
    const Tensor& o = val(o_prev);
    const Tensor& s = val(syn);
    if (!u.same_shape(o) || !u.same_shape(s))
        throw ShapeError("lif_update state/input shapes differ");
    Tensor out = s;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] += alpha * (1.0 - o.data[i]) * u.data[i];
    bool req = requires_grad(u_prev) || requires_grad(o_prev) || requires_grad(syn);
    int iu = u_prev.id, io = o_prev.id, is = syn.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "lif_update", [self, iu, io, is, alpha](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& u = t.nodes_[iu].value.data;
        const auto& o = t.nodes_[io].value.data;
        if (t.nodes_[iu].requires_grad) {
            auto& gu = t.grad_buf(iu);
            for (size_t i = 0; i < g.size(); ++i) gu[i] += g[i] * alpha * (1.0 - o[i]);
        }
        if (t.nodes_[io].requires_grad) {
            auto& go = t.grad_buf(io);
            for (size_t i = 0; i < g.size(); ++i) go[i] -= g[i] * alpha * u[i];
        }
        if (t.nodes_[is].requires_grad) {
            auto& gs = t.grad_buf(is);
            for (size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        }
    });
}

Tape::Val Tape::spike(Val membrane, Val threshold) {
    const Tensor& u = val(membrane);
    const Tensor& th = val(threshold);
    if (th.numel() != 1) throw ShapeError("spike threshold must be a single element");
    double thv = th.data[0];
    Tensor out = u;
    for (double& v : out.data) v = v >= thv ? 1.0 : 0.0;
    bool req = requires_grad(membrane) || requires_grad(threshold);
    int iu = membrane.id, it = threshold.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "spike", [self, iu, it, thv](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const auto& u = t.nodes_[iu].value.data;
        bool want_u = t.nodes_[iu].requires_grad;
        bool want_t = t.nodes_[it].requires_grad;
        std::vector<double>* gu = want_u ? &t.grad_buf(iu) : nullptr;
        std::vector<double>* gt = want_t ? &t.grad_buf(it) : nullptr;
        for (size_t i = 0; i < g.size(); ++i) {
            double sg = surrogate_grad(u[i] - thv);
            if (sg == 0.0 || g[i] == 0.0) continue;
            if (gu) (*gu)[i] += g[i] * sg;
            if (gt) (*gt)[0] -= g[i] * sg;
        }
    });
}

// ------------------------------------------------------------ heads support

Tape::Val Tape::zeta_sq_mean(Val scores, Tensor labels) {
    const Tensor& s = val(scores);
    if (s.numel() != labels.numel())
        throw ShapeError("zeta_sq_mean score/label size mismatch");
    auto lab = std::make_shared<std::vector<double>>(std::move(labels.data));
    double acc = 0.0;
    for (size_t i = 0; i < s.data.size(); ++i) {
        double l = (*lab)[i];
        double z = l > 0.05 ? s.data[i] - l : std::max(0.0, s.data[i]);
        acc += z * z;
    }
    double inv = 1.0 / static_cast<double>(s.numel());
    Tensor out({1});
    out.data[0] = acc * inv;
    int is = scores.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(scores), "zeta_sq_mean",
                [self, is, lab, inv](Tape& t) {
        if (!t.nodes_[is].requires_grad) return;
        double g = t.nodes_[self].grad[0] * inv;
        const auto& s = t.nodes_[is].value.data;
        auto& gs = t.grad_buf(is);
        for (size_t i = 0; i < s.size(); ++i) {
            double l = (*lab)[i];
            if (l > 0.05) {
                gs[i] += g * 2.0 * (s[i] - l);
            } else if (s[i] > 0.0) {
                // subgradient 0 exactly at the kink
                gs[i] += g * 2.0 * s[i];
            }
        }
    });
}

namespace {

struct BilinearTap {
    int x0, y0;
    double wx, wy;  // weight toward x0+1 / y0+1
    bool clamped_x, clamped_y;
};

BilinearTap make_tap(double fx, double fy, int w, int h) {
    BilinearTap tap{};
    tap.clamped_x = fx <= 0.0 || fx >= w - 1;
    tap.clamped_y = fy <= 0.0 || fy >= h - 1;
    fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    tap.x0 = std::min(static_cast<int>(fx), w - 2 < 0 ? 0 : w - 2);
    tap.y0 = std::min(static_cast<int>(fy), h - 2 < 0 ? 0 : h - 2);
    tap.wx = w > 1 ? fx - tap.x0 : 0.0;
    tap.wy = h > 1 ? fy - tap.y0 : 0.0;
    return tap;
}

inline double tap_sample(const Tensor& f, int c, const BilinearTap& t, int w) {
    int x1 = w > 1 ? t.x0 + 1 : t.x0;
    int y1 = f.shape[1] > 1 ? t.y0 + 1 : t.y0;
    double a = f.at(c, t.y0, t.x0), b = f.at(c, t.y0, x1);
    double d = f.at(c, y1, t.x0), e = f.at(c, y1, x1);
    return (1.0 - t.wy) * ((1.0 - t.wx) * a + t.wx * b) + t.wy * ((1.0 - t.wx) * d + t.wx * e);
}

}  // namespace

Tape::Val Tape::box_pool(Val features, Val box, double stride, int grid) {
    const Tensor& f = val(features);
    const Tensor& bx = val(box);
    if (f.ndim() != 3) throw ShapeError("box_pool expects CxHxW features");
    if (bx.numel() != 4) throw ShapeError("box_pool box must hold {cx,cy,w,h}");
    if (grid < 1) throw ConfigError("box_pool grid must be >= 1");
    double cx = bx.data[0], cy = bx.data[1], bw = bx.data[2], bh = bx.data[3];
    if (bw <= 0.0 || bh <= 0.0)
        throw GeometryError("box_pool box has nonpositive extent");
    int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    Tensor out({1, c});
    double inv = 1.0 / static_cast<double>(grid * grid);
    auto taps = std::make_shared<std::vector<BilinearTap>>();
    taps->reserve(static_cast<size_t>(grid) * grid);
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            double px = cx - bw / 2.0 + (gx + 0.5) * bw / grid;
            double py = cy - bh / 2.0 + (gy + 0.5) * bh / grid;
            BilinearTap tap = make_tap(px / stride - 0.5, py / stride - 0.5, w, h);
            taps->push_back(tap);
            for (int ci = 0; ci < c; ++ci) out.at(0, ci) += tap_sample(f, ci, tap, w) * inv;
        }
    bool req = requires_grad(features) || requires_grad(box);
    int fid = features.id, bid = box.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), req, "box_pool",
                [self, fid, bid, stride, grid, inv, taps, c, h, w](Tape& t) {
        const auto& g = t.nodes_[self].grad;
        const Tensor& f = t.nodes_[fid].value;
        bool want_f = t.nodes_[fid].requires_grad;
        bool want_b = t.nodes_[bid].requires_grad;
        std::vector<double>* gf = want_f ? &t.grad_buf(fid) : nullptr;
        std::vector<double>* gb = want_b ? &t.grad_buf(bid) : nullptr;
        size_t tid = 0;
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx, ++tid) {
                const BilinearTap& tap = (*taps)[tid];
                int x1 = w > 1 ? tap.x0 + 1 : tap.x0;
                int y1 = h > 1 ? tap.y0 + 1 : tap.y0;
                double ddx_total = 0.0, ddy_total = 0.0;
                for (int ci = 0; ci < c; ++ci) {
                    double go = g[static_cast<size_t>(ci)] * inv;
                    if (go == 0.0) continue;
                    double a = f.at(ci, tap.y0, tap.x0), b = f.at(ci, tap.y0, x1);
                    double d = f.at(ci, y1, tap.x0), e = f.at(ci, y1, x1);
                    if (gf) {
                        size_t base = static_cast<size_t>(ci) * h * w;
                        (*gf)[base + static_cast<size_t>(tap.y0) * w + tap.x0] +=
                            go * (1.0 - tap.wy) * (1.0 - tap.wx);
                        (*gf)[base + static_cast<size_t>(tap.y0) * w + x1] +=
                            go * (1.0 - tap.wy) * tap.wx;
                        (*gf)[base + static_cast<size_t>(y1) * w + tap.x0] +=
                            go * tap.wy * (1.0 - tap.wx);
                        (*gf)[base + static_cast<size_t>(y1) * w + x1] += go * tap.wy * tap.wx;
                    }
                    if (gb) {
                        double dfx = (1.0 - tap.wy) * (b - a) + tap.wy * (e - d);
                        double dfy = (1.0 - tap.wx) * (d - a) + tap.wx * (e - b);
                        ddx_total += go * (tap.clamped_x ? 0.0 : dfx);
                        ddy_total += go * (tap.clamped_y ? 0.0 : dfy);
                    }
                }
                if (gb) {
                    // feature coords are px/stride - 0.5
                    double dpx = ddx_total / stride;
                    double dpy = ddy_total / stride;
                    (*gb)[0] += dpx;
                    (*gb)[1] += dpy;
                    (*gb)[2] += dpx * ((gx + 0.5) / grid - 0.5);
                    (*gb)[3] += dpy * ((gy + 0.5) / grid - 0.5);
                }
            }
    });
}

Tape::Val Tape::grid_sample_map(Val features, int out_h, int out_w) {
    const Tensor& f = val(features);
    if (f.ndim() != 3) throw ShapeError("grid_sample_map expects CxHxW features");
    if (out_h < 1 || out_w < 1) throw ConfigError("grid_sample_map output must be nonempty");
    int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    Tensor out({out_h * out_w, c});
    auto taps = std::make_shared<std::vector<BilinearTap>>();
    taps->reserve(static_cast<size_t>(out_h) * out_w);
    for (int sy = 0; sy < out_h; ++sy)
        for (int sx = 0; sx < out_w; ++sx) {
            double fy = (sy + 0.5) * h / static_cast<double>(out_h) - 0.5;
            double fx = (sx + 0.5) * w / static_cast<double>(out_w) - 0.5;
            BilinearTap tap = make_tap(fx, fy, w, h);
            taps->push_back(tap);
            int row = sy * out_w + sx;
            for (int ci = 0; ci < c; ++ci) out.at(row, ci) = tap_sample(f, ci, tap, w);
        }
    int fid = features.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(features), "grid_sample_map",
                [self, fid, taps, c, h, w](Tape& t) {
        if (!t.nodes_[fid].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& gf = t.grad_buf(fid);
        for (size_t row = 0; row < taps->size(); ++row) {
            const BilinearTap& tap = (*taps)[row];
            int x1 = w > 1 ? tap.x0 + 1 : tap.x0;
            int y1 = h > 1 ? tap.y0 + 1 : tap.y0;
            for (int ci = 0; ci < c; ++ci) {
                double go = g[row * static_cast<size_t>(c) + static_cast<size_t>(ci)];
                if (go == 0.0) continue;
                size_t base = static_cast<size_t>(ci) * h * w;
                gf[base + static_cast<size_t>(tap.y0) * w + tap.x0] += go * (1.0 - tap.wy) * (1.0 - tap.wx);
                gf[base + static_cast<size_t>(tap.y0) * w + x1] += go * (1.0 - tap.wy) * tap.wx;
                gf[base + static_cast<size_t>(y1) * w + tap.x0] += go * tap.wy * (1.0 - tap.wx);
                gf[base + static_cast<size_t>(y1) * w + x1] += go * tap.wy * tap.wx;
            }
        }
    });
}

Tape::Val Tape::patchify(Val features, int p) {
    const Tensor& f = val(features);
    if (f.ndim() != 3) throw ShapeError("patchify expects CxHxW features");
    if (p < 1) throw ConfigError("patch resolution must be >= 1");
    int c = f.shape[0], h = f.shape[1], w = f.shape[2];
    if (h % p != 0 || w % p != 0)
        throw ShapeError("feature extent " + shape_str(f.shape) + " not divisible by patch " +
                         std::to_string(p));
    int gh = h / p, gw = w / p;
    int n = gh * gw;
    int width = p * p * c;
    Tensor out({n, width});
    for (int py = 0; py < gh; ++py)
        for (int px = 0; px < gw; ++px) {
            int row = py * gw + px;
            for (int ci = 0; ci < c; ++ci)
                for (int iy = 0; iy < p; ++iy)
                    for (int ix = 0; ix < p; ++ix)
                        out.at(row, ci * p * p + iy * p + ix) =
                            f.at(ci, py * p + iy, px * p + ix);
        }
    int fid = features.id;
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), requires_grad(features), "patchify",
                [self, fid, p, c, gh, gw](Tape& t) {
        if (!t.nodes_[fid].requires_grad) return;
        const auto& g = t.nodes_[self].grad;
        auto& gf = t.grad_buf(fid);
        int h = gh * p, w = gw * p;
        int width = p * p * c;
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px) {
                int row = py * gw + px;
                for (int ci = 0; ci < c; ++ci)
                    for (int iy = 0; iy < p; ++iy)
                        for (int ix = 0; ix < p; ++ix)
                            gf[(static_cast<size_t>(ci) * h + py * p + iy) * w + px * p + ix] +=
                                g[static_cast<size_t>(row) * width + ci * p * p + iy * p + ix];
            }
    });
}

// ------------------------------------------------------------ ParameterStore

Tensor& ParameterStore::create(const std::string& id, Tensor init, bool trainable) {
    if (entries_.count(id)) throw ConfigError("duplicate parameter id: " + id);
    Entry e;
    e.tensor = std::move(init);
    e.trainable = trainable;
    auto [it, ok] = entries_.emplace(id, std::move(e));
    (void)ok;
    return it->second.tensor;
}

Tensor& ParameterStore::at(const std::string& id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ConfigError("unknown parameter id: " + id);
    return it->second.tensor;
}

const Tensor& ParameterStore::at(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ConfigError("unknown parameter id: " + id);
    return it->second.tensor;
}

bool ParameterStore::trainable(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ConfigError("unknown parameter id: " + id);
    return it->second.trainable;
}

void ParameterStore::set_trainable(const std::string& id, bool trainable) {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ConfigError("unknown parameter id: " + id);
    it->second.trainable = trainable;
}

int64_t ParameterStore::total_scalars() const {
    int64_t n = 0;
    for (const auto& [id, e] : entries_) n += e.tensor.numel();
    return n;
}

// ------------------------------------------------------------------ Forward

Tape::Val Forward::p(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    const auto& entry = store->at(name);
    Tape::Val v = tape.leaf(entry, store->trainable(name));
    bound.emplace(name, v);
    return v;
}

Tape::Val Forward::drop(Tape::Val v) {
    if (!training || dropout_rate == 0.0) return v;
    if (!rng) throw ConfigError("dropout in training mode requires an rng");
    return tape.dropout(v, dropout_rate, *rng, true);
}

GradMap Forward::pull_grads() {
    GradMap out;
    for (const auto& [name, v] : bound) {
        if (!store->trainable(name)) continue;
        out.emplace(name, tape.grad(v));
    }
    return out;
}

}  // namespace spikefuse
