#include "spikefuse/fusion.hpp"

#include <cmath>

namespace spikefuse {

void FusionConfig::validate() const {
    if (p < 1) throw ConfigError("patch resolution must be >= 1");
    if (d_dim < 1) throw ConfigError("embedding width must be >= 1");
    if (heads < 1 || d_dim % heads != 0)
        throw ConfigError("embedding width " + std::to_string(d_dim) +
                          " must divide evenly into " + std::to_string(heads) + " heads");
    if (blocks < 1) throw ConfigError("fusion iterations must be >= 1");
    if (mlp_ratio <= 0.0) throw ConfigError("mlp ratio must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0,1)");
}

namespace {

void create_linear(ParameterStore& store, Rng& rng, const std::string& base, int fin,
                   int fout) {
    double bound = std::sqrt(1.0 / fin);
    store.create(base + ".w", Tensor::uniform({fin, fout}, rng, -bound, bound));
    store.create(base + ".b", Tensor::zeros({fout}));
}

void create_norm(ParameterStore& store, const std::string& base, int width) {
    store.create(base + ".g", Tensor::full({width}, 1.0));
    store.create(base + ".b", Tensor::zeros({width}));
}

Tape::Val apply_norm(Forward& fwd, Tape::Val x, const std::string& base) {
    return fwd.tape.layer_norm(x, fwd.p(base + ".g"), fwd.p(base + ".b"));
}

Tape::Val apply_linear(Forward& fwd, Tape::Val x, const std::string& base) {
    return fwd.tape.linear(x, fwd.p(base + ".w"), fwd.p(base + ".b"));
}

void create_mlp(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                const std::string& base) {
    create_linear(store, rng, base + ".fc1", cfg.d_dim, cfg.mlp_width());
    create_linear(store, rng, base + ".fc2", cfg.mlp_width(), cfg.d_dim);
}

Tape::Val apply_mlp(Forward& fwd, Tape::Val x, const std::string& base) {
    return apply_linear(fwd, fwd.tape.gelu(apply_linear(fwd, x, base + ".fc1")), base + ".fc2");
}

}  // namespace

// ---------------------------------------------------------------- embedding

void create_embed_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                         const std::string& prefix, int channels) {
    int flat = cfg.p * cfg.p * channels;
    create_norm(store, prefix + ".ln1", flat);
    create_linear(store, rng, prefix + ".proj", flat, cfg.d_dim);
    create_norm(store, prefix + ".ln2", cfg.d_dim);
}

Tape::Val embed_patches(Forward& fwd, Tape::Val features, const FusionConfig& cfg,
                        const std::string& prefix) {
    Tape::Val x = fwd.tape.patchify(features, cfg.p);
    x = apply_norm(fwd, x, prefix + ".ln1");
    x = apply_linear(fwd, x, prefix + ".proj");
    x = apply_norm(fwd, x, prefix + ".ln2");
    return fwd.drop(x);
}

// ----------------------------------------------------------- self attention

void create_self_attn_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                             const std::string& prefix) {
    create_norm(store, prefix + ".ln1", cfg.d_dim);
    create_linear(store, rng, prefix + ".msa.q", cfg.d_dim, cfg.d_dim);
    // No key bias: softmax cancels a per-row constant shift, so it would be
    // a parameter without effect.
    double bound = std::sqrt(1.0 / cfg.d_dim);
    store.create(prefix + ".msa.k.w", Tensor::uniform({cfg.d_dim, cfg.d_dim}, rng, -bound, bound));
    create_linear(store, rng, prefix + ".msa.v", cfg.d_dim, cfg.d_dim);
    create_linear(store, rng, prefix + ".msa.o", cfg.d_dim, cfg.d_dim);
    create_norm(store, prefix + ".ln2", cfg.d_dim);
    create_mlp(store, rng, cfg, prefix + ".mlp");
}

Tape::Val self_attn_block(Forward& fwd, Tape::Val x, const FusionConfig& cfg,
                          const std::string& prefix) {
    if (fwd.tape.shape(x)[1] != cfg.d_dim)
        throw ShapeError("attention input width " + std::to_string(fwd.tape.shape(x)[1]) +
                         " vs configured " + std::to_string(cfg.d_dim));
    Tape& t = fwd.tape;
    int dh = cfg.head_width();
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tape::Val xn = apply_norm(fwd, x, prefix + ".ln1");
    Tape::Val q = apply_linear(fwd, xn, prefix + ".msa.q");
    Tape::Val k = t.matmul(xn, fwd.p(prefix + ".msa.k.w"));
    Tape::Val v = apply_linear(fwd, xn, prefix + ".msa.v");

    Tape::Val heads_out;
    for (int h = 0; h < cfg.heads; ++h) {
        Tape::Val qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        Tape::Val kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        Tape::Val vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        Tape::Val attn = t.softmax_rows(t.scale(t.matmul_bt(qh, kh), inv_sqrt));
        Tape::Val oh = t.matmul(attn, vh);
        heads_out = h == 0 ? oh : t.concat_cols(heads_out, oh);
    }
    Tape::Val msa = apply_linear(fwd, heads_out, prefix + ".msa.o");
    Tape::Val x1 = t.add(msa, x);
    Tape::Val x2 = apply_norm(fwd, x1, prefix + ".ln2");
    return t.add(apply_mlp(fwd, x2, prefix + ".mlp"), x1);
}

// ---------------------------------------------------------- cross attention

Tape::Val cross_attention(Tape& tape, Tape::Val x, Tape::Val d) {
    std::vector<int> xs = tape.shape(x);
    std::vector<int> ds = tape.shape(d);
    if (xs.size() != 2 || ds.size() != 2 || xs[1] != ds[1])
        throw ShapeError("cross attention width mismatch");
    if (ds[0] != 2 * xs[0])
        throw ShapeError("fusion rows must be twice the query rows, got " +
                         std::to_string(ds[0]) + " vs 2x" + std::to_string(xs[0]));
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(xs[1]));
    Tape::Val attn = tape.softmax_rows(tape.scale(tape.matmul_bt(x, d), inv_sqrt));
    return tape.matmul(attn, d);
}

void create_cross_attn_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                              const std::string& prefix) {
    create_norm(store, prefix + ".ln1", cfg.d_dim);
    create_linear(store, rng, prefix + ".mca.o", cfg.d_dim, cfg.d_dim);
    create_norm(store, prefix + ".ln2", cfg.d_dim);
    create_mlp(store, rng, cfg, prefix + ".mlp");
}

Tape::Val cross_attn_block(Forward& fwd, Tape::Val x, Tape::Val d, const FusionConfig& cfg,
                           const std::string& prefix) {
    Tape& t = fwd.tape;
    std::vector<int> xs = t.shape(x);
    std::vector<int> ds = t.shape(d);
    if (ds[0] != 2 * xs[0])
        throw ShapeError("fusion rows must be twice the query rows");
    int dh = cfg.head_width();
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tape::Val xn = apply_norm(fwd, x, prefix + ".ln1");
    Tape::Val heads_out;
    for (int h = 0; h < cfg.heads; ++h) {
        Tape::Val xh = t.slice_cols(xn, h * dh, (h + 1) * dh);
        Tape::Val dhs = t.slice_cols(d, h * dh, (h + 1) * dh);
        Tape::Val attn = t.softmax_rows(t.scale(t.matmul_bt(xh, dhs), inv_sqrt));
        Tape::Val oh = t.matmul(attn, dhs);
        heads_out = h == 0 ? oh : t.concat_cols(heads_out, oh);
    }
    Tape::Val mca = apply_linear(fwd, heads_out, prefix + ".mca.o");
    Tape::Val x1 = t.add(mca, x);
    Tape::Val x2 = apply_norm(fwd, x1, prefix + ".ln2");
    return t.add(apply_mlp(fwd, x2, prefix + ".mlp"), x1);
}

// -------------------------------------------------------------- fusion loop

void create_fuse_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                        const std::string& prefix) {
    create_self_attn_params(store, rng, cfg, prefix + ".sat1");
    create_self_attn_params(store, rng, cfg, prefix + ".sat2");
    create_cross_attn_params(store, rng, cfg, prefix + ".cat1");
    create_cross_attn_params(store, rng, cfg, prefix + ".cat2");
}

Tape::Val transformer_fuse(Forward& fwd, Tape::Val f_embed, Tape::Val g_embed,
                           const FusionConfig& cfg, const std::string& prefix) {
    Tape& t = fwd.tape;
    if (t.shape(f_embed) != t.shape(g_embed))
        throw ShapeError("modalities must produce equal embedding shapes, got " +
                         shape_str(t.shape(f_embed)) + " vs " + shape_str(t.shape(g_embed)));
    Tape::Val f = f_embed;
    Tape::Val g = g_embed;
    for (int i = 0; i < cfg.blocks; ++i) {
        f = self_attn_block(fwd, f, cfg, prefix + ".sat1");
        g = self_attn_block(fwd, g, cfg, prefix + ".sat2");
        Tape::Val d = t.concat_rows(f, g);
        f = cross_attn_block(fwd, f, d, cfg, prefix + ".cat1");
        g = cross_attn_block(fwd, g, d, cfg, prefix + ".cat2");
    }
    return t.concat_rows(f, g);
}

// ------------------------------------------------------------------ decoder

void create_decoder_params(ParameterStore& store, Rng& rng, const FusionConfig& cfg,
                           const std::string& prefix, int rows, int h, int w) {
    create_norm(store, prefix + ".ln1", cfg.d_dim);
    create_linear(store, rng, prefix + ".proj", rows, h * w);
    create_norm(store, prefix + ".ln2", h * w);
}

Tape::Val decode_embeddings(Forward& fwd, Tape::Val t_embed, int h, int w,
                            const FusionConfig& cfg, const std::string& prefix) {
    if (h < 1 || w < 1 || h * w < 1) throw ShapeError("decoder target extent must be positive");
    Tape& t = fwd.tape;
    Tape::Val x = apply_norm(fwd, t_embed, prefix + ".ln1");
    x = t.transpose(x);  // d_dim x rows
    x = apply_linear(fwd, x, prefix + ".proj");
    x = apply_norm(fwd, x, prefix + ".ln2");
    x = fwd.drop(x);
    return t.reshape(x, {cfg.d_dim, h, w});
}

// -------------------------------------------------------------- FusionLevel

FusionLevel::FusionLevel(FusionConfig cfg, std::string strategy, std::string prefix,
                         int channels_f, int channels_g, int feat_h, int feat_w)
    : cfg_(cfg),
      strategy_(std::move(strategy)),
      prefix_(std::move(prefix)),
      channels_f_(channels_f),
      channels_g_(channels_g),
      feat_h_(feat_h),
      feat_w_(feat_w) {
    cfg_.validate();
    if (strategy_ != "tff" && strategy_ != "concat" && strategy_ != "add")
        throw ConfigError("unknown fusion strategy '" + strategy_ + "'");
    if (strategy_ == "add" && channels_f_ != channels_g_)
        throw ConfigError("additive fusion needs equal channel counts, got " +
                          std::to_string(channels_f_) + " vs " + std::to_string(channels_g_));
    if (strategy_ == "tff" && (feat_h_ % cfg_.p != 0 || feat_w_ % cfg_.p != 0))
        throw ConfigError("feature extent " + std::to_string(feat_h_) + "x" +
                          std::to_string(feat_w_) + " not divisible by patch " +
                          std::to_string(cfg_.p));
}

int FusionLevel::out_channels() const {
    if (strategy_ == "add") return channels_f_;
    return cfg_.d_dim;
}

void FusionLevel::create_params(ParameterStore& store, Rng& rng) const {
    if (strategy_ == "add") return;
    if (strategy_ == "concat") {
        int cin = channels_f_ + channels_g_;
        double bound = std::sqrt(1.0 / cin);
        store.create(prefix_ + ".mix.w",
                     Tensor::uniform({cfg_.d_dim, cin, 1, 1}, rng, -bound, bound));
        store.create(prefix_ + ".mix.b", Tensor::zeros({cfg_.d_dim}));
        return;
    }
    create_embed_params(store, rng, cfg_, prefix_ + ".embed_f", channels_f_);
    create_embed_params(store, rng, cfg_, prefix_ + ".embed_g", channels_g_);
    create_fuse_params(store, rng, cfg_, prefix_);
    int rows = 2 * (feat_h_ / cfg_.p) * (feat_w_ / cfg_.p);
    create_decoder_params(store, rng, cfg_, prefix_ + ".dec", rows, feat_h_, feat_w_);
}

Tape::Val FusionLevel::fuse(Forward& fwd, Tape::Val f, Tape::Val g) const {
    Tape& t = fwd.tape;
    std::vector<int> fs = t.shape(f);
    std::vector<int> gs = t.shape(g);
    if (fs.size() != 3 || gs.size() != 3 || fs[1] != gs[1] || fs[2] != gs[2])
        throw ShapeError("fusion inputs must agree spatially, got " + shape_str(fs) + " vs " +
                         shape_str(gs));
    if (strategy_ == "add") {
        if (fs[0] != gs[0]) throw ShapeError("additive fusion needs equal channels");
        return t.add(f, g);
    }
    if (strategy_ == "concat") {
        int c = fs[0] + gs[0];
        int hw = fs[1] * fs[2];
        Tape::Val stacked = t.reshape(
            t.concat_rows(t.reshape(f, {fs[0], hw}), t.reshape(g, {gs[0], hw})),
            {c, fs[1], fs[2]});
        return t.conv2d(stacked, fwd.p(prefix_ + ".mix.w"), fwd.p(prefix_ + ".mix.b"), 1, 0);
    }
    Tape::Val fe = embed_patches(fwd, f, cfg_, prefix_ + ".embed_f");
    Tape::Val ge = embed_patches(fwd, g, cfg_, prefix_ + ".embed_g");
    Tape::Val fused = transformer_fuse(fwd, fe, ge, cfg_, prefix_);
    return decode_embeddings(fwd, fused, fs[1], fs[2], cfg_, prefix_ + ".dec");
}

}  // namespace spikefuse
