#pragma once

#include <memory>
#include <string>
#include <vector>

#include "spikefuse/backbones.hpp"
#include "spikefuse/config.hpp"
#include "spikefuse/energy.hpp"
#include "spikefuse/events.hpp"
#include "spikefuse/fusion.hpp"
#include "spikefuse/heads.hpp"

namespace spikefuse {

/// The assembled tracker: dense conv backbone for frames, spiking backbone
/// for event slices, one fusion level per feature scale, and the two
/// tracking heads. Owns the parameter store.
class TrackerModel {
public:
    explicit TrackerModel(const RunConfig& config);

    /// Fresh parameter initialization from the config seed.
    void init_params();
    /// Adopt previously saved parameters (checkpoint load).
    void adopt_store(ParameterStore&& store);

    struct Features {
        Tape::Val low;   // fused map at stride 8
        Tape::Val high;  // fused map at stride 16
    };
    Features features(Forward& fwd, const MultimodalSample& sample) const;

    struct PairLossParts {
        Tape::Val total;
        double cls = 0.0;
        double reg = 0.0;
    };
    /// Loss of one template/search pair with jittered overlap candidates.
    PairLossParts pair_loss(Forward& fwd, const MultimodalSample& tmpl,
                            const MultimodalSample& search, Rng& sample_rng,
                            int candidates) const;

    Tape::Val score_map(Forward& fwd, const Features& tmpl, const Features& search,
                        const BBox& template_box) const;
    Tape::Val predict_overlap(Forward& fwd, const Features& tmpl, const Features& search,
                              const BBox& template_box, Tape::Val candidate) const;

    /// Spike trains per layer from one sample, for firing-rate probes.
    std::vector<std::vector<Tensor>> probe_spike_trains(const MultimodalSample& sample) const;

    std::vector<LayerOpSpec> ann_layer_specs() const;
    std::vector<LayerOpSpec> snn_layer_specs() const;
    /// The spiking architecture rebuilt as a dense reference, for the
    /// energy ratio against an identical topology.
    std::vector<LayerOpSpec> snn_as_dense_specs() const { return snn_layer_specs(); }

    /// Keep spike thresholds strictly positive after optimizer updates.
    void clamp_thresholds(double floor = 1e-3);
    bool is_backbone_param(const std::string& name) const;

    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    const RunConfig& config() const { return cfg_; }

    double stride_low() const { return 8.0; }
    double stride_high() const { return 16.0; }
    int score_map_cells() const { return cfg_.resolved_score_map_size(); }
    double score_stride() const {
        return static_cast<double>(cfg_.frame_size) / score_map_cells();
    }

private:
    RunConfig cfg_;
    std::unique_ptr<AnnBackbone> ann_;
    std::unique_ptr<SnnBackbone> snn_;
    std::unique_ptr<FusionLevel> fusion_low_;
    std::unique_ptr<FusionLevel> fusion_high_;
    std::unique_ptr<ClassifierHead> classifier_;
    std::unique_ptr<IouHead> iou_head_;
    ParameterStore store_;
    int frame_channels_ = 1;
};

}  // namespace spikefuse
