#pragma once

#include <string>
#include <vector>

#include "spikefuse/model.hpp"

namespace spikefuse {

struct TrainResult {
    std::vector<double> losses;  // one total per step
    std::vector<double> cls_losses;
    std::vector<double> reg_losses;
};

/// Offline training over template/search pairs sampled from the given
/// sequences. Writes one line per step to `log_path` when nonempty.
/// Aborts with a diagnostic naming the first non-finite tensor if the loss
/// diverges.
TrainResult train_model(TrackerModel& model,
                        const std::vector<std::vector<MultimodalSample>>& sequences,
                        const std::string& log_path = "");

/// Trailing-window average of the first and last `window` entries.
double smoothed_head(const std::vector<double>& values, int window);
double smoothed_tail(const std::vector<double>& values, int window);

}  // namespace spikefuse
