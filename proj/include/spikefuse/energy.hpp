#pragma once

#include <string>
#include <vector>

#include "spikefuse/tensor.hpp"

namespace spikefuse {

/// Per-layer operation geometry: kernel size, input channels, output
/// spatial extent and channels.
struct LayerOpSpec {
    int kernel = 0;
    int in_channels = 0;
    int out_h = 0;
    int out_w = 0;
    int out_channels = 0;

    double dense_ops() const {
        return static_cast<double>(kernel) * kernel * in_channels * out_h * out_w *
               out_channels;
    }
};

/// Mean spike probability of the train entering each accumulate-driven
/// layer; fr[0] corresponds to layer 2 (layer 1 sees real-valued input).
struct FiringRateStats {
    std::vector<double> fr;
};

/// Dense multiply-accumulate count: sum over layers of
/// K^2 * C_in * H_out * W_out * C_out.
double count_ann_macs(const std::vector<LayerOpSpec>& layers);

/// Spiking counts over `steps` time steps: the first layer runs dense
/// multiply-accumulates every step; deeper layers run accumulates scaled by
/// their firing rates.
struct SnnOpCounts {
    double mac = 0.0;
    double ac = 0.0;
};
SnnOpCounts count_snn_ops(const std::vector<LayerOpSpec>& layers, const FiringRateStats& fr,
                          int steps);

/// Firing rate of each train: total spikes / (neurons * steps * samples).
/// Outer index is the layer the train feeds; inner vectors hold one binary
/// tensor per (sample, step).
FiringRateStats measure_firing_rate(const std::vector<std::vector<Tensor>>& trains_per_layer);

struct EnergyReport {
    double mac_ann = 0.0;
    double mac_snn = 0.0;
    double ac_snn = 0.0;
    double e_mac = 4.6;  // pJ
    double e_ac = 0.9;   // pJ
    double phi_ann = 0.0;
    double phi_snn = 0.0;
    double eta = 0.0;
};

EnergyReport energy_report(const std::vector<LayerOpSpec>& ann_layers,
                           const std::vector<LayerOpSpec>& snn_layers,
                           const FiringRateStats& fr, int steps, double e_mac = 4.6,
                           double e_ac = 0.9);

std::string energy_report_text(const EnergyReport& report);
std::string energy_report_kv(const EnergyReport& report);

}  // namespace spikefuse
