#include "spikefuse/metrics.hpp"

#include <fstream>

#include "spikefuse/errors.hpp"

namespace spikefuse {

MetricSummary evaluate_metrics(const std::vector<TrackResult>& results) {
    if (results.empty()) throw ConfigError("metric evaluation needs at least one result");
    double n = static_cast<double>(results.size());

    MetricSummary summary;
    summary.success_curve.resize(101);
    for (int k = 0; k <= 100; ++k) {
        double tau = k / 100.0;
        int hits = 0;
        for (const auto& r : results)
            if (r.overlap >= tau) ++hits;
        summary.success_curve[static_cast<size_t>(k)] = hits / n;
    }
    summary.precision_curve.resize(51);
    for (int t = 0; t <= 50; ++t) {
        int hits = 0;
        for (const auto& r : results)
            if (r.center_error <= t) ++hits;
        summary.precision_curve[static_cast<size_t>(t)] = hits / n;
    }

    summary.pr = summary.precision_curve[20];
    summary.op50 = summary.success_curve[50];
    summary.op75 = summary.success_curve[75];
    double area = 0.0;
    for (int k = 0; k < 100; ++k)
        area += 0.5 * (summary.success_curve[static_cast<size_t>(k)] +
                       summary.success_curve[static_cast<size_t>(k) + 1]);
    summary.sr = area / 100.0;
    return summary;
}

void write_curve(const std::string& path, double threshold0, double step,
                 const std::vector<double>& values) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    for (size_t i = 0; i < values.size(); ++i)
        out << threshold0 + step * static_cast<double>(i) << " " << values[i] << "\n";
}

}  // namespace spikefuse
