#include "spikefuse/model.hpp"

#include <algorithm>
#include <cmath>

namespace spikefuse {

namespace {

// Stride invariants of the tracker pipeline: low-level stage 8x, high-level
// stage 16x cumulative.
void validate_strides(const std::vector<ConvSpec>& low, const std::vector<ConvSpec>& high,
                      const std::string& which) {
    if (stack_stride(low) != 8)
        throw ConfigError(which + " low-level stage must have cumulative stride 8, got " +
                          std::to_string(stack_stride(low)));
    if (stack_stride(high) != 2)
        throw ConfigError(which + " high-level stage must add stride 2, got " +
                          std::to_string(stack_stride(high)));
}

}  // namespace

TrackerModel::TrackerModel(const RunConfig& config) : cfg_(config) {
    cfg_.validate();
    if (cfg_.frame_size % 16 != 0)
        throw ConfigError("frame size must be divisible by 16");

    AnnBackboneConfig ann_cfg{parse_conv_stack(cfg_.ann_low), parse_conv_stack(cfg_.ann_high)};
    SnnBackboneConfig snn_cfg{parse_conv_stack(cfg_.snn_convl), parse_conv_stack(cfg_.snn_convh)};
    validate_strides(ann_cfg.low, ann_cfg.high, "frame backbone");
    validate_strides(snn_cfg.convl, snn_cfg.convh, "event backbone");

    ann_ = std::make_unique<AnnBackbone>(ann_cfg, "ann");
    snn_ = std::make_unique<SnnBackbone>(snn_cfg, "snn", cfg_.alpha);

    FusionConfig fusion_cfg;
    fusion_cfg.p = cfg_.p;
    fusion_cfg.d_dim = cfg_.d_dim;
    fusion_cfg.heads = cfg_.heads;
    fusion_cfg.blocks = cfg_.blocks;
    fusion_cfg.mlp_ratio = cfg_.mlp_ratio;
    fusion_cfg.dropout = cfg_.dropout;

    int low_hw = cfg_.frame_size / 8;
    int high_hw = cfg_.frame_size / 16;
    fusion_low_ = std::make_unique<FusionLevel>(fusion_cfg, cfg_.fusion_strategy, "fusion.low",
                                                ann_->low_channels(), snn_->low_channels(),
                                                low_hw, low_hw);
    fusion_high_ = std::make_unique<FusionLevel>(fusion_cfg, cfg_.fusion_strategy, "fusion.high",
                                                 ann_->high_channels(), snn_->high_channels(),
                                                 high_hw, high_hw);

    classifier_ = std::make_unique<ClassifierHead>("heads.cls", fusion_high_->out_channels());
    iou_head_ = std::make_unique<IouHead>("heads.iou", fusion_low_->out_channels(),
                                          fusion_high_->out_channels(), cfg_.iou_mlp_width);
}

void TrackerModel::init_params() {
    if (store_.size() != 0) throw ConfigError("parameters already initialized");
    Rng rng(cfg_.seed);
    Rng init_rng = rng.fork(0x1a17);
    ann_->create_params(store_, init_rng, frame_channels_);
    snn_->create_params(store_, init_rng, 1, cfg_.u_th_init);
    fusion_low_->create_params(store_, init_rng);
    fusion_high_->create_params(store_, init_rng);
    classifier_->create_params(store_, init_rng);
    iou_head_->create_params(store_, init_rng);
}

void TrackerModel::adopt_store(ParameterStore&& store) {
    if (store_.size() != 0) throw ConfigError("parameters already initialized");
    // Validate against a reference initialization of the same topology.
    ParameterStore reference;
    Rng rng(cfg_.seed);
    Rng init_rng = rng.fork(0x1a17);
    ann_->create_params(reference, init_rng, frame_channels_);
    snn_->create_params(reference, init_rng, 1, cfg_.u_th_init);
    fusion_low_->create_params(reference, init_rng);
    fusion_high_->create_params(reference, init_rng);
    classifier_->create_params(reference, init_rng);
    iou_head_->create_params(reference, init_rng);
    if (reference.size() != store.size())
        throw ConfigError("checkpoint parameter count does not match the configured model");
    reference.for_each([&](const std::string& id, const ParameterStore::Entry& entry) {
        if (!store.has(id)) throw ConfigError("checkpoint is missing parameter " + id);
        if (store.at(id).shape != entry.tensor.shape)
            throw ConfigError("checkpoint parameter " + id + " has shape " +
                              shape_str(store.at(id).shape) + ", expected " +
                              shape_str(entry.tensor.shape));
    });
    store_ = std::move(store);
}

TrackerModel::Features TrackerModel::features(Forward& fwd, const MultimodalSample& sample) const {
    if (sample.frame.ndim() != 3 || sample.frame.shape[0] != frame_channels_ ||
        sample.frame.shape[1] != cfg_.frame_size || sample.frame.shape[2] != cfg_.frame_size)
        throw ShapeError("sample frame is " + shape_str(sample.frame.shape) + ", expected " +
                         std::to_string(frame_channels_) + "x" + std::to_string(cfg_.frame_size) +
                         "x" + std::to_string(cfg_.frame_size));
    if (sample.slices.empty()) throw ConfigError("sample has no event slices");

    Tape::Val frame = fwd.c(sample.frame);
    auto [f_low, f_high] = ann_->forward(fwd, frame);

    std::vector<Tape::Val> slices;
    slices.reserve(sample.slices.size());
    for (const auto& slice : sample.slices) slices.push_back(fwd.c(slice_to_tensor(slice)));
    SnnBackbone::Trains trains = snn_->forward(fwd, slices);
    Tape::Val g_low = rate_code(fwd.tape, trains.low);
    Tape::Val g_high = rate_code(fwd.tape, trains.high);

    Features out;
    out.low = fusion_low_->fuse(fwd, f_low, g_low);
    out.high = fusion_high_->fuse(fwd, f_high, g_high);
    return out;
}

Tape::Val TrackerModel::score_map(Forward& fwd, const Features& tmpl, const Features& search,
                                  const BBox& template_box) const {
    return classifier_->score_map(fwd, tmpl.high, search.high, template_box, stride_high(),
                                  score_map_cells());
}

Tape::Val TrackerModel::predict_overlap(Forward& fwd, const Features& tmpl,
                                        const Features& search, const BBox& template_box,
                                        Tape::Val candidate) const {
    return iou_head_->predict(fwd, tmpl.low, tmpl.high, search.low, search.high, template_box,
                              candidate, stride_low(), stride_high());
}

TrackerModel::PairLossParts TrackerModel::pair_loss(Forward& fwd, const MultimodalSample& tmpl,
                                                    const MultimodalSample& search,
                                                    Rng& sample_rng, int candidates) const {
    Features tf = features(fwd, tmpl);
    Features sf = features(fwd, search);

    Tape::Val scores = score_map(fwd, tf, sf, tmpl.ground_truth_box);
    GaussianLabel label = gaussian_label(search.ground_truth_box, score_map_cells(),
                                         score_map_cells(), score_stride());
    Tape::Val cls = fwd.tape.zeta_sq_mean(scores, label.values);

    const BBox& gt = search.ground_truth_box;
    double fs = static_cast<double>(cfg_.frame_size);
    std::vector<Tape::Val> reg_terms;
    for (int c = 0; c < candidates; ++c) {
        BBox cand = gt;
        // Candidate curriculum: the annotation itself, then center shifts of
        // growing magnitude (the refinement loop operates in exactly that
        // neighborhood), then a jointly jittered box.
        switch (c % 4) {
            case 0:
                break;
            case 1:
                cand.cx += sample_rng.normal(0.0, 0.08 * gt.w);
                cand.cy += sample_rng.normal(0.0, 0.08 * gt.h);
                break;
            case 2:
                cand.cx += sample_rng.normal(0.0, 0.25 * gt.w);
                cand.cy += sample_rng.normal(0.0, 0.25 * gt.h);
                break;
            default:
                cand.cx += sample_rng.normal(0.0, 0.15 * gt.w);
                cand.cy += sample_rng.normal(0.0, 0.15 * gt.h);
                cand.w *= std::exp(sample_rng.uniform(-0.3, 0.3));
                cand.h *= std::exp(sample_rng.uniform(-0.3, 0.3));
                break;
        }
        if (c > 0) {
            cand.w = std::max(4.0, std::min(cand.w, fs));
            cand.h = std::max(4.0, std::min(cand.h, fs));
            cand.cx = std::min(std::max(cand.cx, 0.0), fs);
            cand.cy = std::min(std::max(cand.cy, 0.0), fs);
        }
        double target = iou(cand, gt);
        Tape::Val cand_val = fwd.c(Tensor::from({4}, {cand.cx, cand.cy, cand.w, cand.h}));
        Tape::Val pred = predict_overlap(fwd, tf, sf, tmpl.ground_truth_box, cand_val);
        Tape::Val diff = fwd.tape.sub(pred, fwd.c(Tensor::full({1}, target)));
        reg_terms.push_back(fwd.tape.mul(diff, diff));
    }
    Tape::Val reg = fwd.tape.average(reg_terms);

    PairLossParts parts;
    parts.cls = fwd.tape.val(cls).data[0];
    parts.reg = fwd.tape.val(reg).data[0];
    parts.total = fwd.tape.add(fwd.tape.scale(cls, cfg_.beta), reg);
    return parts;
}

std::vector<std::vector<Tensor>> TrackerModel::probe_spike_trains(
    const MultimodalSample& sample) const {
    Forward fwd(store_);
    std::vector<Tape::Val> slices;
    for (const auto& slice : sample.slices) slices.push_back(fwd.c(slice_to_tensor(slice)));
    SnnBackbone::Trains trains = snn_->forward(fwd, slices);
    std::vector<std::vector<Tensor>> out;
    for (const auto& layer : trains.per_layer) {
        std::vector<Tensor> steps;
        for (Tape::Val v : layer) steps.push_back(fwd.tape.val(v));
        out.push_back(std::move(steps));
    }
    return out;
}

namespace {

std::vector<LayerOpSpec> specs_from_stacks(const std::vector<ConvSpec>& a,
                                           const std::vector<ConvSpec>& b, int in_channels,
                                           int extent) {
    std::vector<LayerOpSpec> specs;
    int c = in_channels;
    int h = extent, w = extent;
    auto add = [&](const std::vector<ConvSpec>& stack) {
        for (const auto& layer : stack) {
            h = (h + 2 * layer.padding - layer.kernel) / layer.stride + 1;
            w = (w + 2 * layer.padding - layer.kernel) / layer.stride + 1;
            specs.push_back(LayerOpSpec{layer.kernel, c, h, w, layer.out_channels});
            c = layer.out_channels;
        }
    };
    add(a);
    add(b);
    return specs;
}

}  // namespace

std::vector<LayerOpSpec> TrackerModel::ann_layer_specs() const {
    return specs_from_stacks(ann_->config().low, ann_->config().high, frame_channels_,
                             cfg_.frame_size);
}

std::vector<LayerOpSpec> TrackerModel::snn_layer_specs() const {
    return specs_from_stacks(snn_->config().convl, snn_->config().convh, 1, cfg_.frame_size);
}

void TrackerModel::clamp_thresholds(double floor) {
    for (const std::string& id : snn_->threshold_ids()) {
        double& v = store_.at(id).data[0];
        if (v < floor) v = floor;
    }
}

bool TrackerModel::is_backbone_param(const std::string& name) const {
    return name.rfind("ann.", 0) == 0 || name.rfind("snn.", 0) == 0;
}

}  // namespace spikefuse
