#include <doctest.h>

#include <cmath>
#include <numeric>

#include "spikefuse/fusion.hpp"
#include "spikefuse/gradcheck.hpp"

using namespace spikefuse;

namespace {

Tensor rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

FusionConfig tiny_cfg(int p = 2, int d = 8, int heads = 2, int blocks = 1) {
    FusionConfig cfg;
    cfg.p = p;
    cfg.d_dim = d;
    cfg.heads = heads;
    cfg.blocks = blocks;
    cfg.mlp_ratio = 2.0;
    cfg.dropout = 0.0;
    return cfg;
}

// plain-loop helpers for the attention oracle
std::vector<std::vector<double>> to_rows(const Tensor& t) {
    std::vector<std::vector<double>> rows(static_cast<size_t>(t.shape[0]),
                                          std::vector<double>(static_cast<size_t>(t.shape[1])));
    for (int i = 0; i < t.shape[0]; ++i)
        for (int j = 0; j < t.shape[1]; ++j) rows[(size_t)i][(size_t)j] = t.at(i, j);
    return rows;
}

std::vector<std::vector<double>> ln_rows(const std::vector<std::vector<double>>& x,
                                         const Tensor& g, const Tensor& b) {
    auto out = x;
    size_t f = x[0].size();
    for (auto& row : out) {
        double mean = std::accumulate(row.begin(), row.end(), 0.0) / f;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= f;
        double inv = 1.0 / std::sqrt(var + 1e-5);
        for (size_t j = 0; j < f; ++j)
            row[j] = g.data[j] * (row[j] - mean) * inv + b.data[j];
    }
    return out;
}

std::vector<std::vector<double>> lin_rows(const std::vector<std::vector<double>>& x,
                                          const Tensor& w, const Tensor& b) {
    size_t fin = x[0].size(), fout = static_cast<size_t>(w.shape[1]);
    std::vector<std::vector<double>> out(x.size(), std::vector<double>(fout));
    for (size_t i = 0; i < x.size(); ++i)
        for (size_t j = 0; j < fout; ++j) {
            double acc = b.data[j];
            for (size_t k = 0; k < fin; ++k) acc += x[i][k] * w.at((int)k, (int)j);
            out[i][j] = acc;
        }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("fusion");

TEST_CASE("patch extraction matches the index-arithmetic oracle") {
    // ramp image: value encodes (c, y, x) uniquely
    int c = 3, h = 6, w = 4, p = 2;
    Tensor img({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) img.at(ci, y, x) = ci * 10000 + y * 100 + x;
    Tape tape;
    auto out = tape.patchify(tape.leaf(img, false), p);
    REQUIRE(tape.val(out).shape == std::vector<int>{(h / p) * (w / p), p * p * c});
    for (int py = 0; py < h / p; ++py)
        for (int px = 0; px < w / p; ++px)
            for (int ci = 0; ci < c; ++ci)
                for (int iy = 0; iy < p; ++iy)
                    for (int ix = 0; ix < p; ++ix) {
                        int row = py * (w / p) + px;
                        int col = ci * p * p + iy * p + ix;
                        CHECK(tape.val(out).at(row, col) ==
                              img.at(ci, py * p + iy, px * p + ix));
                    }
}

TEST_CASE("embedding yields N = H*W/p^2 rows of width d_dim") {
    Rng rng(41);
    FusionConfig cfg = tiny_cfg(2, 16);
    ParameterStore store;
    create_embed_params(store, rng, cfg, "emb", 4);
    Forward fwd(store);
    auto out = embed_patches(fwd, fwd.c(rand_tensor({4, 8, 8}, rng)), cfg, "emb");
    CHECK(fwd.tape.shape(out) == std::vector<int>{16, 16});

    // degenerate patching p=1: one row per pixel, width C
    FusionConfig cfg1 = tiny_cfg(1, 8);
    ParameterStore store1;
    create_embed_params(store1, rng, cfg1, "emb", 4);
    Forward fwd1(store1);
    auto out1 = embed_patches(fwd1, fwd1.c(rand_tensor({4, 3, 3}, rng)), cfg1, "emb");
    CHECK(fwd1.tape.shape(out1) == std::vector<int>{9, 8});

    CHECK_THROWS_AS(embed_patches(fwd, fwd.c(rand_tensor({4, 7, 8}, rng)), cfg, "emb"),
                    ShapeError);
}

TEST_CASE("self attention block with zeroed output projections is the identity") {
    Rng rng(42);
    FusionConfig cfg = tiny_cfg(2, 8, 2);
    ParameterStore store;
    create_self_attn_params(store, rng, cfg, "sat");
    for (double& v : store.at("sat.msa.o.w").data) v = 0.0;
    for (double& v : store.at("sat.mlp.fc2.w").data) v = 0.0;

    Forward fwd(store);
    Tensor x = rand_tensor({5, 8}, rng);
    auto out = self_attn_block(fwd, fwd.c(x), cfg, "sat");
    CHECK(fwd.tape.val(out).data == x.data);
}

TEST_CASE("softmax over a single element is exactly one") {
    Tape tape;
    auto y = tape.softmax_rows(tape.leaf(Tensor::from({1, 1}, {-3.7}), false));
    CHECK(tape.val(y).data[0] == 1.0);
}

TEST_CASE("single-head self attention matches a brute-force oracle") {
    Rng rng(43);
    FusionConfig cfg = tiny_cfg(2, 6, 1);
    ParameterStore store;
    create_self_attn_params(store, rng, cfg, "sat");
    Tensor x = rand_tensor({3, 6}, rng, -0.5, 0.5);

    Forward fwd(store);
    auto out = self_attn_block(fwd, fwd.c(x), cfg, "sat");

    // oracle: explicit pre-norm block evaluation
    auto xr = to_rows(x);
    auto xn = ln_rows(xr, store.at("sat.ln1.g"), store.at("sat.ln1.b"));
    auto q = lin_rows(xn, store.at("sat.msa.q.w"), store.at("sat.msa.q.b"));
    auto k = lin_rows(xn, store.at("sat.msa.k.w"), Tensor::zeros({6}));
    auto v = lin_rows(xn, store.at("sat.msa.v.w"), store.at("sat.msa.v.b"));
    size_t n = 3, d = 6;
    std::vector<std::vector<double>> att(n, std::vector<double>(d, 0.0));
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> scores(n);
        double mx = -1e300;
        for (size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (size_t kk = 0; kk < d; ++kk) s += q[i][kk] * k[j][kk];
            scores[j] = s / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, scores[j]);
        }
        double sum = 0.0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            sum += s;
        }
        for (size_t j = 0; j < n; ++j)
            for (size_t kk = 0; kk < d; ++kk) att[i][kk] += scores[j] / sum * v[j][kk];
    }
    auto msa = lin_rows(att, store.at("sat.msa.o.w"), store.at("sat.msa.o.b"));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) msa[i][j] += xr[i][j];  // residual
    auto x2 = ln_rows(msa, store.at("sat.ln2.g"), store.at("sat.ln2.b"));
    auto h1 = lin_rows(x2, store.at("sat.mlp.fc1.w"), store.at("sat.mlp.fc1.b"));
    for (auto& row : h1)
        for (double& vv : row) vv = 0.5 * vv * (1.0 + std::erf(vv / std::sqrt(2.0)));
    auto mlp = lin_rows(h1, store.at("sat.mlp.fc2.w"), store.at("sat.mlp.fc2.b"));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) {
            double want = mlp[i][j] + msa[i][j];
            CHECK(std::fabs(fwd.tape.val(out).at((int)i, (int)j) - want) <= 1e-9);
        }
}

TEST_CASE("cross attention contracts") {
    Tape tape;
    SUBCASE("identical fusion rows collapse every query to that row") {
        Rng rng(44);
        Tensor d({6, 3});
        for (int i = 0; i < 6; ++i) {
            d.at(i, 0) = 0.3;
            d.at(i, 1) = -1.2;
            d.at(i, 2) = 0.8;
        }
        Tensor x = rand_tensor({3, 3}, rng, -5.0, 5.0);
        auto out = cross_attention(tape, tape.leaf(x, false), tape.leaf(d, false));
        for (int i = 0; i < 3; ++i) {
            CHECK(tape.val(out).at(i, 0) == doctest::Approx(0.3).epsilon(1e-9));
            CHECK(tape.val(out).at(i, 1) == doctest::Approx(-1.2).epsilon(1e-9));
            CHECK(tape.val(out).at(i, 2) == doctest::Approx(0.8).epsilon(1e-9));
        }
    }
    SUBCASE("hand-sized instance matches the weighted-sum oracle") {
        Tensor x = Tensor::from({2, 2}, {1.0, 0.0, -0.5, 2.0});
        Tensor d = Tensor::from({4, 2}, {0.5, 0.5, 1.0, -1.0, 0.0, 2.0, -1.5, 0.5});
        auto out = cross_attention(tape, tape.leaf(x, false), tape.leaf(d, false));
        double inv = 1.0 / std::sqrt(2.0);
        for (int i = 0; i < 2; ++i) {
            double scores[4], mx = -1e300, sum = 0.0;
            for (int j = 0; j < 4; ++j) {
                scores[j] = (x.at(i, 0) * d.at(j, 0) + x.at(i, 1) * d.at(j, 1)) * inv;
                mx = std::max(mx, scores[j]);
            }
            for (double& s : scores) {
                s = std::exp(s - mx);
                sum += s;
            }
            for (int col = 0; col < 2; ++col) {
                double want = 0.0;
                for (int j = 0; j < 4; ++j) want += scores[j] / sum * d.at(j, col);
                CHECK(std::fabs(tape.val(out).at(i, col) - want) <= 1e-9);
            }
        }
    }
    SUBCASE("saturating the queries selects the best-matching fusion row") {
        Rng rng(45);
        Tensor x = rand_tensor({2, 4}, rng);
        Tensor d = rand_tensor({4, 4}, rng);
        Tensor xbig = x;
        for (double& v : xbig.data) v *= 1e4;
        auto out = cross_attention(tape, tape.leaf(xbig, false), tape.leaf(d, false));
        for (int i = 0; i < 2; ++i) {
            int best = 0;
            double best_score = -1e300;
            for (int j = 0; j < 4; ++j) {
                double s = 0.0;
                for (int kk = 0; kk < 4; ++kk) s += x.at(i, kk) * d.at(j, kk);
                if (s > best_score) {
                    best_score = s;
                    best = j;
                }
            }
            for (int col = 0; col < 4; ++col)
                CHECK(tape.val(out).at(i, col) == doctest::Approx(d.at(best, col)).epsilon(1e-6));
        }
    }
    SUBCASE("row-count mismatch rejected") {
        auto x = tape.leaf(Tensor::zeros({3, 2}), false);
        auto d = tape.leaf(Tensor::zeros({5, 2}), false);
        CHECK_THROWS_AS(cross_attention(tape, x, d), ShapeError);
    }
}

TEST_CASE("cross attention outputs stay in the convex hull of fusion rows") {
    Rng rng(46);
    for (int trial = 0; trial < 10; ++trial) {
        int n = rng.uniform_int(1, 4), d = rng.uniform_int(2, 6);
        Tensor x = rand_tensor({n, d}, rng, -3.0, 3.0);
        Tensor dd = rand_tensor({2 * n, d}, rng, -3.0, 3.0);
        Tape tape;
        auto out = cross_attention(tape, tape.leaf(x, false), tape.leaf(dd, false));
        // independent weight recomputation
        for (int i = 0; i < n; ++i) {
            std::vector<double> wts(static_cast<size_t>(2 * n));
            double mx = -1e300, sum = 0.0;
            for (int j = 0; j < 2 * n; ++j) {
                double s = 0.0;
                for (int kk = 0; kk < d; ++kk) s += x.at(i, kk) * dd.at(j, kk);
                wts[(size_t)j] = s / std::sqrt(static_cast<double>(d));
                mx = std::max(mx, wts[(size_t)j]);
            }
            for (double& wv : wts) {
                wv = std::exp(wv - mx);
                sum += wv;
            }
            double total = 0.0;
            for (double& wv : wts) {
                wv /= sum;
                CHECK(wv >= 0.0);
                total += wv;
            }
            CHECK(std::fabs(total - 1.0) <= 1e-6);
            for (int col = 0; col < d; ++col) {
                double want = 0.0;
                for (int j = 0; j < 2 * n; ++j) want += wts[(size_t)j] * dd.at(j, col);
                CHECK(std::fabs(tape.val(out).at(i, col) - want) <= 1e-9);
            }
        }
    }
}

TEST_CASE("cross attention block composes the projection-free core") {
    Rng rng(47);
    FusionConfig cfg = tiny_cfg(2, 6, 1);
    ParameterStore store;
    create_cross_attn_params(store, rng, cfg, "cat");
    // identity output mixing, zero MLP tail
    Tensor& wo = store.at("cat.mca.o.w");
    for (double& v : wo.data) v = 0.0;
    for (int i = 0; i < 6; ++i) wo.at(i, i) = 1.0;
    for (double& v : store.at("cat.mlp.fc2.w").data) v = 0.0;

    Tensor x = rand_tensor({3, 6}, rng);
    Tensor d = rand_tensor({6, 6}, rng);

    Forward fwd(store);
    auto out = cross_attn_block(fwd, fwd.c(x), fwd.c(d), cfg, "cat");

    Forward fwd2(store);
    auto xn = fwd2.tape.layer_norm(fwd2.c(x), fwd2.p("cat.ln1.g"), fwd2.p("cat.ln1.b"));
    auto core = cross_attention(fwd2.tape, xn, fwd2.c(d));
    auto want = fwd2.tape.add(core, fwd2.c(x));
    for (size_t i = 0; i < fwd.tape.val(out).data.size(); ++i)
        CHECK(std::fabs(fwd.tape.val(out).data[i] - fwd2.tape.val(want).data[i]) <= 1e-9);

    CHECK(fwd.tape.shape(out) == std::vector<int>{3, 6});
    Forward fwd3(store);
    CHECK_THROWS_AS(
        cross_attn_block(fwd3, fwd3.c(Tensor::zeros({3, 6})), fwd3.c(Tensor::zeros({5, 6})),
                         cfg, "cat"),
        ShapeError);
}

TEST_CASE("transformer fusion stacks frame rows above event rows") {
    Rng rng(48);
    FusionConfig cfg = tiny_cfg(2, 8, 2, 2);
    ParameterStore store;
    create_fuse_params(store, rng, cfg, "fuse");
    // zero every residual tail so blocks pass inputs through unchanged
    for (const char* name : {"fuse.sat1", "fuse.sat2"})
        for (const char* leaf : {".msa.o.w", ".mlp.fc2.w"})
            for (double& v : store.at(std::string(name) + leaf).data) v = 0.0;
    for (const char* name : {"fuse.cat1", "fuse.cat2"})
        for (const char* leaf : {".mca.o.w", ".mlp.fc2.w"})
            for (double& v : store.at(std::string(name) + leaf).data) v = 0.0;

    Tensor f = rand_tensor({4, 8}, rng);
    Tensor g = rand_tensor({4, 8}, rng);
    Forward fwd(store);
    auto fused = transformer_fuse(fwd, fwd.c(f), fwd.c(g), cfg, "fuse");
    REQUIRE(fwd.tape.shape(fused) == std::vector<int>{8, 8});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) {
            CHECK(fwd.tape.val(fused).at(i, j) == f.at(i, j));
            CHECK(fwd.tape.val(fused).at(i + 4, j) == g.at(i, j));
        }

    Forward fwd2(store);
    CHECK_THROWS_AS(
        transformer_fuse(fwd2, fwd2.c(Tensor::zeros({4, 8})), fwd2.c(Tensor::zeros({3, 8})),
                         cfg, "fuse"),
        ShapeError);
}

TEST_CASE("fusion parameters are shared across iterations") {
    Rng rng(49);
    ParameterStore one, two;
    create_fuse_params(one, rng, tiny_cfg(2, 8, 2, 1), "fuse");
    Rng rng2(49);
    create_fuse_params(two, rng2, tiny_cfg(2, 8, 2, 3), "fuse");
    CHECK(one.size() == two.size());
    CHECK(one.total_scalars() == two.total_scalars());
}

TEST_CASE("fusion output permutes with its input rows") {
    Rng rng(50);
    FusionConfig cfg = tiny_cfg(2, 8, 2, 2);
    ParameterStore store;
    create_fuse_params(store, rng, cfg, "fuse");
    int n = 5;
    Tensor f = rand_tensor({n, 8}, rng);
    Tensor g = rand_tensor({n, 8}, rng);

    std::vector<int> perm = {3, 0, 4, 1, 2};
    Tensor fp({n, 8}), gp({n, 8});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 8; ++j) {
            fp.at(i, j) = f.at(perm[(size_t)i], j);
            gp.at(i, j) = g.at(perm[(size_t)i], j);
        }

    Forward fa(store);
    auto base = fa.tape.val(transformer_fuse(fa, fa.c(f), fa.c(g), cfg, "fuse"));
    Forward fb(store);
    auto permuted = fb.tape.val(transformer_fuse(fb, fb.c(fp), fb.c(gp), cfg, "fuse"));

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 8; ++j) {
            CHECK(std::fabs(permuted.at(i, j) - base.at(perm[(size_t)i], j)) <= 1e-9);
            CHECK(std::fabs(permuted.at(i + n, j) - base.at(perm[(size_t)i] + n, j)) <= 1e-9);
        }
}

TEST_CASE("decoder maps embeddings back to a feature map") {
    Rng rng(51);
    FusionConfig cfg;
    cfg.p = 4;
    cfg.d_dim = 512;
    cfg.heads = 2;
    cfg.blocks = 2;
    cfg.dropout = 0.0;
    ParameterStore store;
    create_decoder_params(store, rng, cfg, "dec", 32, 4, 4);
    Forward fwd(store);
    auto t_embed = fwd.c(rand_tensor({32, 512}, rng));
    auto out = decode_embeddings(fwd, t_embed, 4, 4, cfg, "dec");
    CHECK(fwd.tape.shape(out) == std::vector<int>{512, 4, 4});

    // flattening inverts the trailing reshape exactly
    auto flat = fwd.tape.reshape(out, {512, 16});
    CHECK(fwd.tape.val(flat).data == fwd.tape.val(out).data);
    for (int d = 0; d < 512; d += 97)
        for (int k = 0; k < 16; ++k)
            CHECK(fwd.tape.val(out).at(d, k / 4, k % 4) == fwd.tape.val(flat).at(d, k));
}

TEST_CASE("transpose satisfies out[d,n] == in[n,d]") {
    Rng rng(52);
    Tensor x = rand_tensor({5, 3}, rng);
    Tape tape;
    auto x_t = tape.transpose(tape.leaf(x, false));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) CHECK(tape.val(x_t).at(j, i) == x.at(i, j));
}

TEST_CASE("fuse_level strategies") {
    Rng rng(53);
    SUBCASE("add with zero event features is the identity") {
        FusionLevel level(tiny_cfg(2, 8), "add", "lvl", 4, 4, 4, 4);
        ParameterStore store;
        level.create_params(store, rng);
        Forward fwd(store);
        Tensor f = rand_tensor({4, 4, 4}, rng);
        auto out = level.fuse(fwd, fwd.c(f), fwd.c(Tensor::zeros({4, 4, 4})));
        CHECK(fwd.tape.val(out).data == f.data);
        CHECK(level.out_channels() == 4);
    }
    SUBCASE("concat projects to d_dim channels") {
        FusionLevel level(tiny_cfg(2, 8), "concat", "lvl", 3, 5, 4, 4);
        ParameterStore store;
        level.create_params(store, rng);
        Forward fwd(store);
        auto out = level.fuse(fwd, fwd.c(rand_tensor({3, 4, 4}, rng)),
                              fwd.c(rand_tensor({5, 4, 4}, rng)));
        CHECK(fwd.tape.shape(out) == std::vector<int>{8, 4, 4});
        CHECK(level.out_channels() == 8);
    }
    SUBCASE("tff composes embed, fuse, decode to the input extent") {
        FusionLevel level(tiny_cfg(2, 16, 2, 1), "tff", "lvl", 3, 5, 8, 8);
        ParameterStore store;
        level.create_params(store, rng);
        Forward fwd(store);
        auto out = level.fuse(fwd, fwd.c(rand_tensor({3, 8, 8}, rng)),
                              fwd.c(rand_tensor({5, 8, 8}, rng)));
        CHECK(fwd.tape.shape(out) == std::vector<int>{16, 8, 8});
    }
    SUBCASE("strategy and shape validation") {
        CHECK_THROWS_AS(FusionLevel(tiny_cfg(), "nope", "lvl", 2, 2, 4, 4), ConfigError);
        CHECK_THROWS_AS(FusionLevel(tiny_cfg(), "add", "lvl", 2, 3, 4, 4), ConfigError);
        CHECK_THROWS_AS(FusionLevel(tiny_cfg(3, 9, 3), "tff", "lvl", 2, 2, 4, 4), ConfigError);
        FusionLevel level(tiny_cfg(2, 8), "add", "lvl", 2, 2, 4, 4);
        ParameterStore store;
        level.create_params(store, rng);
        Forward fwd(store);
        CHECK_THROWS_AS(level.fuse(fwd, fwd.c(Tensor::zeros({2, 4, 4})),
                                   fwd.c(Tensor::zeros({2, 6, 6}))),
                        ShapeError);
    }
}

TEST_CASE("attention blocks pass the finite-difference check") {
    Rng rng(54);
    FusionConfig cfg = tiny_cfg(2, 8, 2);
    ParameterStore store;
    create_self_attn_params(store, rng, cfg, "sat");
    store.create("x", rand_tensor({3, 8}, rng, -0.5, 0.5));
    Tensor proj = rand_tensor({3, 8}, rng);
    auto build = [&](Forward& f) {
        return f.tape.weighted_sum(self_attn_block(f, f.p("x"), cfg, "sat"), proj);
    };
    auto res = grad_check(store, build);
    CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("cross attention block passes the finite-difference check") {
    Rng rng(55);
    FusionConfig cfg = tiny_cfg(2, 8, 2);
    ParameterStore store;
    create_cross_attn_params(store, rng, cfg, "cat");
    store.create("x", rand_tensor({2, 8}, rng, -0.5, 0.5));
    store.create("d", rand_tensor({4, 8}, rng, -0.5, 0.5));
    Tensor proj = rand_tensor({2, 8}, rng);
    auto build = [&](Forward& f) {
        return f.tape.weighted_sum(cross_attn_block(f, f.p("x"), f.p("d"), cfg, "cat"), proj);
    };
    auto res = grad_check(store, build);
    CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("embedding and decoder pass the finite-difference check") {
    Rng rng(56);
    FusionConfig cfg = tiny_cfg(2, 8, 2);
    ParameterStore store;
    create_embed_params(store, rng, cfg, "emb", 2);
    create_decoder_params(store, rng, cfg, "dec", 8, 4, 4);
    store.create("f", rand_tensor({2, 4, 4}, rng, -0.5, 0.5));
    store.create("g", rand_tensor({2, 4, 4}, rng, -0.5, 0.5));
    Tensor proj = rand_tensor({8, 4, 4}, rng);
    auto build = [&](Forward& f) {
        auto fe = embed_patches(f, f.p("f"), cfg, "emb");
        auto ge = embed_patches(f, f.p("g"), cfg, "emb");
        auto both = f.tape.concat_rows(fe, ge);
        auto dec = decode_embeddings(f, both, 4, 4, cfg, "dec");
        return f.tape.weighted_sum(dec, proj);
    };
    auto res = grad_check(store, build);
    CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("full tff fuse path passes the finite-difference check on a 4-patch toy") {
    Rng rng(57);
    FusionLevel level(tiny_cfg(2, 8, 2, 1), "tff", "lvl", 2, 2, 4, 4);
    ParameterStore store;
    level.create_params(store, rng);
    store.create("f", rand_tensor({2, 4, 4}, rng, -0.5, 0.5));
    store.create("g", rand_tensor({2, 4, 4}, rng, -0.5, 0.5));
    Tensor proj = rand_tensor({8, 4, 4}, rng);
    auto build = [&](Forward& f) {
        return f.tape.weighted_sum(level.fuse(f, f.p("f"), f.p("g")), proj);
    };
    auto res = grad_check(store, build);
    CHECK(res.max_rel_error <= 1e-4);
}

TEST_SUITE_END();
