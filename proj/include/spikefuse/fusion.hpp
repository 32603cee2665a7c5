#pragma once

#include <string>

#include "spikefuse/autodiff.hpp"

namespace spikefuse {

struct FusionConfig {
    int p = 4;            // patch resolution
    int d_dim = 512;      // embedding width
    int heads = 2;        // attention heads
    int blocks = 2;       // fusion iterations
    double mlp_ratio = 4.0;
    double dropout = 0.1;

    int head_width() const { return d_dim / heads; }
    int mlp_width() const { return static_cast<int>(mlp_ratio * d_dim + 0.5); }
    void validate() const;
};

// Parameter creation mirrors the forward functions below; `prefix`
// namespaces one instance's parameters in the store.

void create_embed_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                         const std::string& prefix, int channels);
/// Patch flattening, then LayerNorm -> Linear -> LayerNorm -> Dropout.
Tape::Val embed_patches(Forward& fwd, Tape::Val features, const FusionConfig& cfg,
                        const std::string& prefix);

void create_self_attn_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                             const std::string& prefix);
/// Pre-norm transformer block: X~ = MSA(LN(X)) + X; out = MLP(X~) + X~.
Tape::Val self_attn_block(Forward& fwd, Tape::Val x, const FusionConfig& cfg,
                          const std::string& prefix);

/// Projection-free cross attention: softmax(X D^T / sqrt(width(X))) D.
/// D must have exactly twice the rows of X.
Tape::Val cross_attention(Tape& tape, Tape::Val x, Tape::Val d);

void create_cross_attn_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                              const std::string& prefix);
/// Pre-norm block whose attention splits LN(X) and D across heads, applies
/// the projection-free form per head, and mixes with a learned output
/// projection: X~ = MCA(LN(X)) + X; out = MLP(X~) + X~.
Tape::Val cross_attn_block(Forward& fwd, Tape::Val x, Tape::Val d, const FusionConfig& cfg,
                           const std::string& prefix);

void create_fuse_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                        const std::string& prefix);
/// Iterated self+cross attention over both modalities; parameters are
/// shared across iterations. Output stacks the frame rows above the event
/// rows: 2N x d_dim.
Tape::Val transformer_fuse(Forward& fwd, Tape::Val f_embed, Tape::Val g_embed,
                           const FusionConfig& cfg, const std::string& prefix);

void create_decoder_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                           const std::string& prefix, int rows, int h, int w);
/// LayerNorm -> transpose -> Linear(rows, H*W) -> LayerNorm -> Dropout ->
/// reshape to d_dim x H x W.
Tape::Val decode_embeddings(Forward& fwd, Tape::Val t_embed, int h, int w,
                            const FusionConfig& cfg, const std::string& prefix);

/// One fusion scale: aligns a frame map and an event map of equal spatial
/// extent and merges them with the configured strategy.
///   tff    - embed both, fuse with attention, decode back to a map
///   concat - channel concatenation plus a 1x1 channel-mixing projection
///   add    - elementwise sum (channel counts must match)
class FusionLevel {
public:
    FusionLevel(FusionConfig cfg, std::string strategy, std::string prefix,
                int channels_f, int channels_g, int feat_h, int feat_w);

    void create_params(ParameterStore& store, Rng& rng) const;
    Tape::Val fuse(Forward& fwd, Tape::Val f, Tape::Val g) const;

    int out_channels() const;
    const FusionConfig& config() const { return cfg_; }
    const std::string& strategy() const { return strategy_; }

private:
    FusionConfig cfg_;
    std::string strategy_;
    std::string prefix_;
    int channels_f_;
    int channels_g_;
    int feat_h_;
    int feat_w_;
};

}  // namespace spikefuse
