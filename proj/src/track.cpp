#include "spikefuse/track.hpp"

#include <algorithm>
#include <cmath>

namespace spikefuse {

namespace {

struct CachedFeatures {
    Tensor low;
    Tensor high;
};

TrackerModel::Features leaf_features(Forward& fwd, const CachedFeatures& f) {
    TrackerModel::Features out;
    out.low = fwd.c(f.low);
    out.high = fwd.c(f.high);
    return out;
}

// Subcell peak: argmax plus a mass centroid over its neighborhood. The
// radius should roughly match the trained response width.
void subcell_peak(const Tensor& map, int cells, int radius, double& cy, double& cx) {
    int best = 0;
    for (int i = 1; i < map.numel(); ++i)
        if (map.data[(size_t)i] > map.data[(size_t)best]) best = i;
    int by = best / cells, bx = best % cells;

    double lo = map.data[(size_t)best];
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            int y = by + dy, x = bx + dx;
            if (y < 0 || y >= cells || x < 0 || x >= cells) continue;
            lo = std::min(lo, map.at(0, y, x));
        }
    double mass = 0.0, my = 0.0, mx = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            int y = by + dy, x = bx + dx;
            if (y < 0 || y >= cells || x < 0 || x >= cells) continue;
            double w = map.at(0, y, x) - lo;
            mass += w;
            my += w * y;
            mx += w * x;
        }
    if (mass > 0.0) {
        cy = my / mass;
        cx = mx / mass;
    } else {
        cy = by;
        cx = bx;
    }
}

}  // namespace

std::vector<TrackResult> run_tracker(const TrackerModel& model,
                                     const std::vector<MultimodalSample>& sequence,
                                     const TrackOptions& options) {
    if (sequence.size() < 2) throw ConfigError("tracking needs at least two samples");
    const ParameterStore& store = model.store();

    const BBox init = sequence[0].ground_truth_box;
    CachedFeatures tmpl;
    {
        Forward fwd(store);
        auto feats = model.features(fwd, sequence[0]);
        tmpl.low = fwd.tape.val(feats.low);
        tmpl.high = fwd.tape.val(feats.high);
    }

    double frame_extent = static_cast<double>(model.config().frame_size);
    int cells = model.score_map_cells();
    double stride = model.score_stride();

    std::vector<TrackResult> results;
    double prev_cx = init.cx, prev_cy = init.cy;
    double prev_w = init.w, prev_h = init.h;

    for (size_t i = 1; i < sequence.size(); ++i) {
        CachedFeatures cur;
        {
            Forward fwd(store);
            auto feats = model.features(fwd, sequence[i]);
            auto tf = leaf_features(fwd, tmpl);
            Tape::Val score = model.score_map(fwd, tf, feats, init);
            cur.low = fwd.tape.val(feats.low);
            cur.high = fwd.tape.val(feats.high);

            // Motion prior: normalize the map to [0,1] and weight it with a
            // Gaussian window about the previous center.
            Tensor map = fwd.tape.val(score);
            double mn = map.data[0], mx = map.data[0];
            for (double v : map.data) {
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            double range = mx - mn > 1e-12 ? mx - mn : 1.0;
            for (int y = 0; y < cells; ++y)
                for (int x = 0; x < cells; ++x) {
                    double px = (x + 0.5) * stride;
                    double py = (y + 0.5) * stride;
                    double d2 = (px - prev_cx) * (px - prev_cx) + (py - prev_cy) * (py - prev_cy);
                    double window = std::exp(-d2 / (2.0 * options.window_sigma * options.window_sigma));
                    map.at(0, y, x) = (map.at(0, y, x) - mn) / range * window;
                }
            double cell_y = 0.0, cell_x = 0.0;
            subcell_peak(map, cells, options.centroid_radius, cell_y, cell_x);
            prev_cx = (cell_x + 0.5) * stride;
            prev_cy = (cell_y + 0.5) * stride;
        }

        BBox box{prev_cx, prev_cy, prev_w, prev_h};
        if (options.refine) {
            // Ascend the predicted overlap in the box parameters; extents are
            // held within a band around the initial annotation so an early
            // miscalibrated head cannot collapse the box.
            double w_lo = init.w * (1.0 - options.size_band);
            double w_hi = init.w * (1.0 + options.size_band);
            double h_lo = init.h * (1.0 - options.size_band);
            double h_hi = init.h * (1.0 + options.size_band);
            BBox best = box;
            double base_pred = -1.0, best_pred = -1.0;
            BBox cur_box = box;
            for (int stepi = 0; stepi <= options.refine_steps; ++stepi) {
                Forward fwd(store);
                auto tf = leaf_features(fwd, tmpl);
                TrackerModel::Features sf;
                sf.low = fwd.c(cur.low);
                sf.high = fwd.c(cur.high);
                Tape::Val cand = fwd.tape.leaf(
                    Tensor::from({4}, {cur_box.cx, cur_box.cy, cur_box.w, cur_box.h}), true);
                Tape::Val pred = model.predict_overlap(fwd, tf, sf, init, cand);
                double value = fwd.tape.val(pred).data[0];
                if (stepi == 0) base_pred = value;
                if (value > best_pred) {
                    best_pred = value;
                    best = cur_box;
                }
                if (stepi == options.refine_steps) break;
                fwd.tape.backward(pred);
                const auto& g = fwd.tape.grad(cand);
                auto clip = [](double v, double lim) {
                    return std::max(-lim, std::min(lim, v));
                };
                cur_box.cx += clip(options.refine_rate * g[0] * cur_box.w * cur_box.w, 1.5);
                cur_box.cy += clip(options.refine_rate * g[1] * cur_box.h * cur_box.h, 1.5);
                cur_box.w += clip(options.refine_rate * g[2] * cur_box.w * cur_box.w, 1.0);
                cur_box.h += clip(options.refine_rate * g[3] * cur_box.h * cur_box.h, 1.0);
                cur_box.w = std::max(w_lo, std::min(cur_box.w, w_hi));
                cur_box.h = std::max(h_lo, std::min(cur_box.h, h_hi));
                cur_box.cx = std::min(std::max(cur_box.cx, 0.0), frame_extent);
                cur_box.cy = std::min(std::max(cur_box.cy, 0.0), frame_extent);
            }
            if (best_pred >= base_pred + options.refine_margin) {
                box.cx = best.cx;
                box.cy = best.cy;
                box.w = options.size_damping * prev_w + (1.0 - options.size_damping) * best.w;
                box.h = options.size_damping * prev_h + (1.0 - options.size_damping) * best.h;
            }
        }

        prev_cx = box.cx;
        prev_cy = box.cy;
        prev_w = box.w;
        prev_h = box.h;

        TrackResult r;
        r.box = box;
        r.center_error = center_error(box, sequence[i].ground_truth_box);
        r.overlap = iou(box, sequence[i].ground_truth_box);
        results.push_back(r);
    }
    return results;
}

}  // namespace spikefuse
