#include "spikefuse/energy.hpp"

#include <sstream>

#include "spikefuse/errors.hpp"

namespace spikefuse {

namespace {

void validate_layers(const std::vector<LayerOpSpec>& layers) {
    if (layers.empty()) throw ConfigError("layer list must be nonempty");
    for (const auto& l : layers)
        if (l.kernel < 1 || l.in_channels < 1 || l.out_h < 1 || l.out_w < 1 ||
            l.out_channels < 1)
            throw ConfigError("layer op spec extents must be positive");
}

}  // namespace

double count_ann_macs(const std::vector<LayerOpSpec>& layers) {
    validate_layers(layers);
    double total = 0.0;
    for (const auto& l : layers) total += l.dense_ops();
    return total;
}

SnnOpCounts count_snn_ops(const std::vector<LayerOpSpec>& layers, const FiringRateStats& fr,
                          int steps) {
    validate_layers(layers);
    if (steps < 1) throw ConfigError("step count must be >= 1");
    if (fr.fr.size() + 1 < layers.size())
        throw ConfigError("missing firing rate: need one per layer beyond the first (" +
                          std::to_string(layers.size() - 1) + ", got " +
                          std::to_string(fr.fr.size()) + ")");
    SnnOpCounts counts;
    counts.mac = static_cast<double>(steps) * layers[0].dense_ops();
    for (size_t n = 1; n < layers.size(); ++n) {
        double rate = fr.fr[n - 1];
        if (rate < 0.0 || rate > 1.0) throw DomainError("firing rate outside [0,1]");
        counts.ac += rate * layers[n].dense_ops();
    }
    counts.ac *= static_cast<double>(steps);
    return counts;
}

FiringRateStats measure_firing_rate(const std::vector<std::vector<Tensor>>& trains_per_layer) {
    FiringRateStats stats;
    for (const auto& trains : trains_per_layer) {
        if (trains.empty()) throw ConfigError("empty spike train");
        double spikes = 0.0;
        double size = 0.0;
        for (const Tensor& t : trains) {
            for (double v : t.data) {
                if (v != 0.0 && v != 1.0)
                    throw DomainError("spike trains must be binary, saw " + std::to_string(v));
                spikes += v;
            }
            size += static_cast<double>(t.numel());
        }
        stats.fr.push_back(spikes / size);
    }
    return stats;
}

EnergyReport energy_report(const std::vector<LayerOpSpec>& ann_layers,
                           const std::vector<LayerOpSpec>& snn_layers,
                           const FiringRateStats& fr, int steps, double e_mac, double e_ac) {
    if (e_mac <= 0.0 || e_ac <= 0.0) throw ConfigError("per-op energies must be positive");
    EnergyReport report;
    report.e_mac = e_mac;
    report.e_ac = e_ac;
    report.mac_ann = count_ann_macs(ann_layers);
    SnnOpCounts counts = count_snn_ops(snn_layers, fr, steps);
    report.mac_snn = counts.mac;
    report.ac_snn = counts.ac;
    report.phi_ann = e_mac * report.mac_ann;
    report.phi_snn = e_mac * report.mac_snn + e_ac * report.ac_snn;
    if (report.phi_ann == 0.0) throw DomainError("reference energy is zero; ratio undefined");
    report.eta = report.phi_snn / report.phi_ann;
    return report;
}

std::string energy_report_text(const EnergyReport& r) {
    std::ostringstream os;
    os << "Backbone operation counts\n";
    os << "  dense reference  MAC: " << static_cast<long long>(r.mac_ann + 0.5) << "\n";
    os << "  spiking          MAC: " << static_cast<long long>(r.mac_snn + 0.5)
       << "  AC: " << r.ac_snn << "\n";
    os << "Estimated energy (E_MAC=" << r.e_mac << " pJ, E_AC=" << r.e_ac << " pJ)\n";
    os << "  dense reference  " << r.phi_ann << " pJ\n";
    os << "  spiking          " << r.phi_snn << " pJ\n";
    os << "  ratio eta        " << r.eta << "\n";
    os << "  savings 1-eta    " << 1.0 - r.eta << "\n";
    return os.str();
}

std::string energy_report_kv(const EnergyReport& r) {
    std::ostringstream os;
    os << "mac_ann=" << r.mac_ann << "\n";
    os << "mac_snn=" << r.mac_snn << "\n";
    os << "ac_snn=" << r.ac_snn << "\n";
    os << "e_mac_pj=" << r.e_mac << "\n";
    os << "e_ac_pj=" << r.e_ac << "\n";
    os << "phi_ann_pj=" << r.phi_ann << "\n";
    os << "phi_snn_pj=" << r.phi_snn << "\n";
    os << "eta=" << r.eta << "\n";
    os << "one_minus_eta=" << 1.0 - r.eta << "\n";
    return os.str();
}

}  // namespace spikefuse
