#pragma once

#include <string>
#include <vector>

#include "spikefuse/geometry.hpp"

namespace spikefuse {

struct TrackResult {
    BBox box;
    double center_error = 0.0;
    double overlap = 0.0;  // IoU against ground truth, in [0,1]
};

/// Precision/success summary. The success curve samples thresholds
/// 0.00..1.00 in steps of 0.01 (fraction of frames with IoU >= tau); the
/// precision curve samples center-error thresholds 0..50 px in steps of
/// 1 px (fraction with error <= t).
struct MetricSummary {
    double pr = 0.0;    // precision at the 20 px threshold
    double sr = 0.0;    // area under the success curve (trapezoid rule)
    double op50 = 0.0;  // success at overlap 0.50
    double op75 = 0.0;  // success at overlap 0.75
    std::vector<double> success_curve;    // 101 entries
    std::vector<double> precision_curve;  // 51 entries
};

MetricSummary evaluate_metrics(const std::vector<TrackResult>& results);

/// Two-column text: threshold value per line.
void write_curve(const std::string& path, double threshold0, double step,
                 const std::vector<double>& values);

}  // namespace spikefuse
