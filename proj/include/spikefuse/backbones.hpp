#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spikefuse/autodiff.hpp"

namespace spikefuse {

/// One convolutional layer in the compact notation "C64k11s4p5"; an
/// optional "-BN" token after a layer enables per-layer normalization.
struct ConvSpec {
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    bool bn = false;
};

std::vector<ConvSpec> parse_conv_stack(const std::string& text);
std::string conv_stack_to_string(const std::vector<ConvSpec>& stack);
int stack_stride(const std::vector<ConvSpec>& stack);
/// Output spatial extent of a stack applied to h x w input.
std::pair<int, int> stack_output_extent(const std::vector<ConvSpec>& stack, int h, int w);

struct AnnBackboneConfig {
    std::vector<ConvSpec> low;   // cumulative stride 8 when used in the tracker
    std::vector<ConvSpec> high;  // additional stride 2
};

struct SnnBackboneConfig {
    std::vector<ConvSpec> convl;
    std::vector<ConvSpec> convh;
};

/// Frame-modality feature extractor: plain conv stages with rectifier
/// activations producing a low-level and a high-level map.
class AnnBackbone {
public:
    AnnBackbone(AnnBackboneConfig cfg, std::string prefix)
        : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {}

    void create_params(ParameterStore& store, Rng& rng, int in_channels) const;
    /// Input H and W must be divisible by 16.
    std::pair<Tape::Val, Tape::Val> forward(Forward& fwd, Tape::Val frame) const;
    Tape::Val forward_low(Forward& fwd, Tape::Val frame) const;
    Tape::Val forward_high(Forward& fwd, Tape::Val low) const;

    const AnnBackboneConfig& config() const { return cfg_; }
    int low_channels() const { return cfg_.low.back().out_channels; }
    int high_channels() const { return cfg_.high.back().out_channels; }

private:
    AnnBackboneConfig cfg_;
    std::string prefix_;
};

/// Event-modality feature extractor built from spiking conv layers. The
/// membrane state persists across the steps of one interval and is zeroed
/// at the first step. Thresholds are per-layer trainable scalars.
class SnnBackbone {
public:
    SnnBackbone(SnnBackboneConfig cfg, std::string prefix, double alpha)
        : cfg_(std::move(cfg)), prefix_(std::move(prefix)), alpha_(alpha) {
        if (alpha_ <= 0.0 || alpha_ >= 1.0)
            throw ConfigError("membrane decay constant must lie in (0,1)");
    }

    void create_params(ParameterStore& store, Rng& rng, int in_channels,
                       double u_th_init) const;

    struct Trains {
        std::vector<Tape::Val> low;   // one spike map per step after convl
        std::vector<Tape::Val> high;  // one spike map per step after convh
        // Spike trains entering layer n+1 (i.e. the output of layer n), one
        // inner vector per step; used for firing-rate probes.
        std::vector<std::vector<Tape::Val>> per_layer;
    };
    /// `slices` hold the normalized [0,1] inputs, one per step.
    Trains forward(Forward& fwd, const std::vector<Tape::Val>& slices) const;

    const SnnBackboneConfig& config() const { return cfg_; }
    double alpha() const { return alpha_; }
    int low_channels() const { return cfg_.convl.back().out_channels; }
    int high_channels() const { return cfg_.convh.back().out_channels; }
    int layer_count() const {
        return static_cast<int>(cfg_.convl.size() + cfg_.convh.size());
    }
    /// Threshold parameter ids in layer order.
    std::vector<std::string> threshold_ids() const;

private:
    SnnBackboneConfig cfg_;
    std::string prefix_;
    double alpha_;
};

/// One LIF step on plain tensors, convenience wrapper over the tape ops.
struct LifStepResult {
    Tensor u;
    Tensor o;
};
LifStepResult lif_step(const Tensor& u_prev, const Tensor& o_prev, const Tensor& synaptic,
                       double alpha, double u_th);

/// Elementwise mean of a spike train; values land on the grid {0, 1/N, .., 1}.
Tape::Val rate_code(Tape& tape, const std::vector<Tape::Val>& train);

}  // namespace spikefuse
