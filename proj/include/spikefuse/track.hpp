#pragma once

#include <vector>

#include "spikefuse/metrics.hpp"
#include "spikefuse/model.hpp"

namespace spikefuse {

struct TrackOptions {
    bool refine = true;        // gradient-ascent box refinement on the overlap head
    int refine_steps = 5;
    double refine_rate = 2.0;  // step scale in relative box coordinates
    double refine_margin = 0.02;  // predicted-overlap gain required to accept
    double window_sigma = 16.0;  // px, motion prior around the previous center
    double size_damping = 0.7;   // fraction of the previous extent kept per frame
    double size_band = 0.5;      // allowed extent range relative to the initial box
    int centroid_radius = 3;     // score cells around the peak used for the subcell fit
};

/// One-pass evaluation: the first sample initializes the target, every
/// later frame is localized with the classifier and refined with the
/// overlap head. Results cover frames 1..end.
std::vector<TrackResult> run_tracker(const TrackerModel& model,
                                     const std::vector<MultimodalSample>& sequence,
                                     const TrackOptions& options = {});

}  // namespace spikefuse
