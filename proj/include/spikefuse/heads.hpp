#pragma once

#include <string>
#include <vector>

#include "spikefuse/autodiff.hpp"
#include "spikefuse/geometry.hpp"

namespace spikefuse {

/// Confidence scores over a search grid; stride converts cells to pixels.
struct ScoreMap {
    Tensor values;  // 1 x H x W
    double stride = 1.0;
};

/// Target map in [0,1] whose peak cell (the one containing the box center)
/// is exactly 1.
struct GaussianLabel {
    Tensor values;  // 1 x H x W
};

/// Radial label with sigma = 0.25 * sqrt(w*h) / stride cells, renormalized
/// so the cell containing the center reads exactly 1.
GaussianLabel gaussian_label(const BBox& box, int map_h, int map_w, double stride);

/// Ramp-thresholded classification residual: s - s_gt where the label is
/// live (s_gt > 0.05), max(0, s) elsewhere.
double zeta(double s, double s_gt);

/// beta * mean_i(cell-mean of zeta^2) + mean_i((IoU_i - IoUgt_i)^2).
double total_loss(const std::vector<ScoreMap>& scores, const std::vector<GaussianLabel>& labels,
                  const std::vector<double>& ious, const std::vector<double>& ious_gt,
                  double beta);

/// Target classifier: a kernel pooled from template features inside the
/// annotated box is correlated with (bilinearly resampled) search features
/// and passed through a learned 1x1 projection.
class ClassifierHead {
public:
    ClassifierHead(std::string prefix, int channels, int pool_grid = 4)
        : prefix_(std::move(prefix)), channels_(channels), pool_grid_(pool_grid) {}

    void create_params(ParameterStore& store, Rng& rng) const;

    /// `feat_stride` is pixels per feature cell; the returned map has
    /// `map_size` cells per side covering the same extent.
    Tape::Val score_map(Forward& fwd, Tape::Val template_features, Tape::Val search_features,
                        const BBox& template_box, double feat_stride, int map_size) const;

private:
    std::string prefix_;
    int channels_;
    int pool_grid_;
};

/// Overlap regressor: modulation vectors pooled from template features
/// gate candidate-pooled search features; a small MLP predicts the overlap,
/// clamped to [0,1]. Pooling is bilinear, so the prediction is
/// differentiable in the candidate box parameters.
class IouHead {
public:
    IouHead(std::string prefix, int channels_low, int channels_high, int mlp_width,
            int pool_grid = 4)
        : prefix_(std::move(prefix)),
          channels_low_(channels_low),
          channels_high_(channels_high),
          mlp_width_(mlp_width),
          pool_grid_(pool_grid) {}

    void create_params(ParameterStore& store, Rng& rng) const;

    /// `candidate` is a tape value holding {cx, cy, w, h} in pixels.
    Tape::Val predict(Forward& fwd, Tape::Val t_low_tmpl, Tape::Val t_high_tmpl,
                      Tape::Val t_low_search, Tape::Val t_high_search, const BBox& template_box,
                      Tape::Val candidate, double stride_low, double stride_high) const;

private:
    std::string prefix_;
    int channels_low_;
    int channels_high_;
    int mlp_width_;
    int pool_grid_;
};

}  // namespace spikefuse
