#include "spikefuse/heads.hpp"

#include <cmath>

namespace spikefuse {

GaussianLabel gaussian_label(const BBox& box, int map_h, int map_w, double stride) {
    if (box.w <= 0.0 || box.h <= 0.0) throw GeometryError("label box has nonpositive extent");
    double cx_cell = box.cx / stride - 0.5;
    double cy_cell = box.cy / stride - 0.5;
    if (box.cx < 0.0 || box.cx > map_w * stride || box.cy < 0.0 || box.cy > map_h * stride)
        throw GeometryError("box center outside the score map extent");
    double sigma = 0.25 * std::sqrt(box.w * box.h) / stride;  // in cells
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    GaussianLabel label;
    label.values = Tensor({1, map_h, map_w});
    double peak = 0.0;
    for (int y = 0; y < map_h; ++y)
        for (int x = 0; x < map_w; ++x) {
            double d2 = (x - cx_cell) * (x - cx_cell) + (y - cy_cell) * (y - cy_cell);
            double v = std::exp(-d2 * inv2s2);
            label.values.at(0, y, x) = v;
            peak = std::max(peak, v);
        }
    // Normalize so the cell containing the center reads exactly 1.
    for (double& v : label.values.data) v /= peak;
    return label;
}

double zeta(double s, double s_gt) {
    if (s_gt > 0.05) return s - s_gt;
    return std::max(0.0, s);
}

double total_loss(const std::vector<ScoreMap>& scores, const std::vector<GaussianLabel>& labels,
                  const std::vector<double>& ious, const std::vector<double>& ious_gt,
                  double beta) {
    if (scores.empty() || scores.size() != labels.size())
        throw ConfigError("score/label lists must be nonempty and equal-length");
    if (ious.empty() || ious.size() != ious_gt.size())
        throw ConfigError("overlap lists must be nonempty and equal-length");

    double cls = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const Tensor& s = scores[i].values;
        const Tensor& l = labels[i].values;
        if (!s.same_shape(l)) throw ShapeError("score map and label disagree in shape");
        double acc = 0.0;
        for (size_t j = 0; j < s.data.size(); ++j) {
            double z = zeta(s.data[j], l.data[j]);
            acc += z * z;
        }
        cls += acc / static_cast<double>(s.numel());
    }
    cls /= static_cast<double>(scores.size());

    double reg = 0.0;
    for (size_t i = 0; i < ious.size(); ++i) {
        double d = ious[i] - ious_gt[i];
        reg += d * d;
    }
    reg /= static_cast<double>(ious.size());

    return beta * cls + reg;
}

// ------------------------------------------------------------- classifier

void ClassifierHead::create_params(ParameterStore& store, Rng& rng) const {
    double bound = std::sqrt(1.0 / channels_);
    store.create(prefix_ + ".proj.w", Tensor::uniform({channels_, 1}, rng, -bound, bound));
    store.create(prefix_ + ".proj.b", Tensor::zeros({1}));
}

Tape::Val ClassifierHead::score_map(Forward& fwd, Tape::Val template_features,
                                    Tape::Val search_features, const BBox& template_box,
                                    double feat_stride, int map_size) const {
    Tape& t = fwd.tape;
    std::vector<int> fs = t.shape(search_features);
    if (fs.size() != 3 || fs[0] != channels_)
        throw ShapeError("classifier expects " + std::to_string(channels_) + " channels, got " +
                         shape_str(fs));
    if (map_size < 1) throw ConfigError("score map size must be >= 1");

    // Region-averaged target kernel from the template.
    Tape::Val box = fwd.c(Tensor::from({4}, {template_box.cx, template_box.cy, template_box.w,
                                             template_box.h}));
    Tape::Val kernel = t.box_pool(template_features, box, feat_stride, pool_grid_);  // 1 x C

    // Correlate over the search grid, then project.
    Tape::Val rows = t.grid_sample_map(search_features, map_size, map_size);  // S*S x C
    Tape::Val gated = t.rows_mul_vec(rows, kernel);
    Tape::Val projected = t.linear(gated, fwd.p(prefix_ + ".proj.w"), fwd.p(prefix_ + ".proj.b"));
    return t.reshape(projected, {1, map_size, map_size});
}

// ----------------------------------------------------------- iou regressor

void IouHead::create_params(ParameterStore& store, Rng& rng) const {
    auto lin = [&](const std::string& base, int fin, int fout, double bias_init) {
        double bound = std::sqrt(1.0 / fin);
        store.create(base + ".w", Tensor::uniform({fin, fout}, rng, -bound, bound));
        store.create(base + ".b", Tensor::full({fout}, bias_init));
    };
    lin(prefix_ + ".mod_l", channels_low_, channels_low_, 0.0);
    lin(prefix_ + ".mod_h", channels_high_, channels_high_, 0.0);
    lin(prefix_ + ".fc1", channels_low_ + channels_high_, mlp_width_, 0.0);
    // Mid-range start keeps the clamp interior so gradients flow from the
    // first step.
    lin(prefix_ + ".fc2", mlp_width_, 1, 0.5);
}

Tape::Val IouHead::predict(Forward& fwd, Tape::Val t_low_tmpl, Tape::Val t_high_tmpl,
                           Tape::Val t_low_search, Tape::Val t_high_search,
                           const BBox& template_box, Tape::Val candidate, double stride_low,
                           double stride_high) const {
    Tape& t = fwd.tape;
    const Tensor& cand = t.val(candidate);
    if (cand.numel() != 4) throw ShapeError("candidate box must hold {cx,cy,w,h}");
    if (cand.data[2] <= 0.0 || cand.data[3] <= 0.0)
        throw GeometryError("candidate box has nonpositive area");

    Tape::Val tbox = fwd.c(Tensor::from({4}, {template_box.cx, template_box.cy, template_box.w,
                                              template_box.h}));
    // Modulation vectors from the template (annotated box).
    Tape::Val v_l = t.linear(t.box_pool(t_low_tmpl, tbox, stride_low, pool_grid_),
                             fwd.p(prefix_ + ".mod_l.w"), fwd.p(prefix_ + ".mod_l.b"));
    Tape::Val v_h = t.linear(t.box_pool(t_high_tmpl, tbox, stride_high, pool_grid_),
                             fwd.p(prefix_ + ".mod_h.w"), fwd.p(prefix_ + ".mod_h.b"));

    // Candidate-pooled search features, gated by the modulation vectors.
    Tape::Val p_l = t.box_pool(t_low_search, candidate, stride_low, pool_grid_);
    Tape::Val p_h = t.box_pool(t_high_search, candidate, stride_high, pool_grid_);
    Tape::Val joint = t.concat_cols(t.mul(v_l, p_l), t.mul(v_h, p_h));

    Tape::Val hidden = t.gelu(t.linear(joint, fwd.p(prefix_ + ".fc1.w"), fwd.p(prefix_ + ".fc1.b")));
    Tape::Val out = t.linear(hidden, fwd.p(prefix_ + ".fc2.w"), fwd.p(prefix_ + ".fc2.b"));
    return t.clamp01(t.reshape(out, {1}));
}

}  // namespace spikefuse
