#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "spikefuse/checkpoint.hpp"
#include "spikefuse/dataset.hpp"
#include "spikefuse/optim.hpp"
#include "spikefuse/track.hpp"
#include "spikefuse/train.hpp"

using namespace spikefuse;

namespace {

RunConfig toy_config() {
    RunConfig c;
    c.ann_low = "C4k7s2p3-C6k3s2p1-C8k3s2p1";
    c.ann_high = "C8k3s2p1";
    c.snn_convl = "C4k11s4p5-C8k5s2p2";
    c.snn_convh = "C8k3s2p1";
    c.p = 2;
    c.d_dim = 16;
    c.heads = 2;
    c.blocks = 1;
    c.mlp_ratio = 2.0;
    c.dropout = 0.0;
    c.fusion_strategy = "tff";
    c.score_map_size = 16;
    c.iou_mlp_width = 16;
    c.epochs = 1;
    c.batch_size = 1;
    c.steps_per_epoch = 2;
    c.frame_size = 64;
    c.frames = 4;
    c.n_slices = 3;
    c.train_sequences = 1;
    c.seed = 7;
    return c;
}

std::vector<MultimodalSample> toy_sequence(uint64_t seed, int frames = 4) {
    SynthParams p;
    p.seed = seed;
    p.frames = frames;
    p.width = p.height = 64;
    p.n_slices = 3;
    return synth_sequence(p).samples;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("learning rate schedule decays exponentially") {
    CHECK(lr_schedule(0.01, 0, 0.9) == 0.01);
    CHECK(lr_schedule(0.01, 1, 0.9) == doctest::Approx(0.009).epsilon(1e-15));
    CHECK(lr_schedule(0.01, 2, 0.9) == doctest::Approx(0.0081).epsilon(1e-15));
    CHECK_THROWS_AS(lr_schedule(0.01, -1, 0.9), ConfigError);
}

TEST_CASE("adam first step moves each coordinate by about the rate") {
    ParameterStore store;
    store.create("w", Tensor::from({3}, {1.0, 2.0, 3.0}));
    Adam adam;
    GradMap grads{{"w", {0.5, -2.0, 1e-3}}};
    adam.step(store, grads, 0.01);
    // bias-corrected first step is lr * g / (|g| + eps) ~= lr * sign(g)
    CHECK(store.at("w").data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(store.at("w").data[1] == doctest::Approx(2.0 + 0.01).epsilon(1e-6));
    CHECK(store.at("w").data[2] == doctest::Approx(3.0 - 0.01).epsilon(1e-4));
}

TEST_CASE("adam leaves parameters alone on zero gradients and ties identical coordinates") {
    ParameterStore store;
    store.create("w", Tensor::from({2}, {0.7, 0.7}));
    Adam adam;
    adam.step(store, {{"w", {0.0, 0.0}}}, 0.05);
    CHECK(store.at("w").data == std::vector<double>{0.7, 0.7});
    adam.step(store, {{"w", {0.3, 0.3}}}, 0.05);
    CHECK(store.at("w").data[0] == store.at("w").data[1]);

    store.create("frozen", Tensor::from({1}, {1.0}), false);
    adam.step(store, {{"frozen", {5.0}}}, 0.05);
    CHECK(store.at("frozen").data[0] == 1.0);

    CHECK_THROWS_AS(adam.step(store, {{"w", {1.0}}}, 0.05), ShapeError);
}

TEST_CASE("metric engine fixtures") {
    SUBCASE("perfect tracking scores one everywhere") {
        std::vector<TrackResult> results(5, TrackResult{{}, 0.0, 1.0});
        auto m = evaluate_metrics(results);
        CHECK(m.pr == 1.0);
        CHECK(m.sr == 1.0);
        CHECK(m.op50 == 1.0);
        CHECK(m.op75 == 1.0);
    }
    SUBCASE("a 25 px error frame leaves the 20 px precision numerator") {
        std::vector<TrackResult> results(4, TrackResult{{}, 0.0, 1.0});
        results.push_back(TrackResult{{}, 25.0, 1.0});
        auto m = evaluate_metrics(results);
        CHECK(m.pr == doctest::Approx(0.8).epsilon(1e-12));
    }
    SUBCASE("constant overlap 0.6") {
        std::vector<TrackResult> results(8, TrackResult{{}, 3.0, 0.6});
        auto m = evaluate_metrics(results);
        CHECK(m.op50 == 1.0);
        CHECK(m.op75 == 0.0);
        // step-curve area: 1 up to the 0.6 threshold
        CHECK(std::fabs(m.sr - 0.6) <= 0.01);
    }
    SUBCASE("permutation invariance") {
        Rng rng(81);
        std::vector<TrackResult> results;
        for (int i = 0; i < 20; ++i)
            results.push_back(TrackResult{{}, rng.uniform(0, 40), rng.uniform(0, 1)});
        auto base = evaluate_metrics(results);
        for (int k = 0; k < 50; ++k)
            std::swap(results[(size_t)rng.uniform_int(0, 19)],
                      results[(size_t)rng.uniform_int(0, 19)]);
        auto shuffled = evaluate_metrics(results);
        CHECK(base.pr == shuffled.pr);
        CHECK(base.sr == shuffled.sr);
        CHECK(base.success_curve == shuffled.success_curve);
    }
    SUBCASE("empty results rejected") {
        CHECK_THROWS_AS(evaluate_metrics({}), ConfigError);
    }
}

TEST_CASE("curves serialize as two-column text") {
    write_curve("/tmp/spikefuse_curve.txt", 0.0, 0.5, {1.0, 0.5, 0.25});
    std::ifstream in("/tmp/spikefuse_curve.txt");
    double t, v;
    in >> t >> v;
    CHECK(t == 0.0);
    CHECK(v == 1.0);
    in >> t >> v;
    CHECK(t == 0.5);
    CHECK(v == 0.5);
    std::remove("/tmp/spikefuse_curve.txt");
}

TEST_CASE("config parsing round trip and validation") {
    auto kv = KeyValues::parse_text("p = 2\nd_dim = 32  # comment\n\nfusion_strategy = add\n");
    CHECK(kv.get("p", 0) == 2);
    CHECK(kv.get("d_dim", 0) == 32);
    CHECK(kv.get("fusion_strategy", std::string()) == "add");
    CHECK(kv.get("missing", 7) == 7);
    CHECK_THROWS_AS(KeyValues::parse_text("no equals sign"), ParseError);
    CHECK_THROWS_AS(KeyValues::parse_text("p = abc").get("p", 0), ParseError);

    RunConfig c = toy_config();
    RunConfig back = RunConfig::from_kv(c.to_kv());
    CHECK(back.ann_low == c.ann_low);
    CHECK(back.d_dim == c.d_dim);
    CHECK(back.seed == c.seed);
    CHECK(back.lr_other == c.lr_other);

    RunConfig bad = toy_config();
    bad.lr_decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = toy_config();
    bad.alpha = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("environment variable overrides the config seed") {
    RunConfig c = toy_config();
    setenv("SPIKEFUSE_SEED", "424242", 1);
    apply_seed_env(c);
    CHECK(c.seed == 424242);
    setenv("SPIKEFUSE_SEED", "notanumber", 1);
    CHECK_THROWS_AS(apply_seed_env(c), ParseError);
    unsetenv("SPIKEFUSE_SEED");
    uint64_t before = c.seed;
    apply_seed_env(c);
    CHECK(c.seed == before);
}

TEST_CASE("checkpoint round trip preserves parameters, flags and config") {
    Rng rng(82);
    ParameterStore store;
    store.create("a.w", Tensor::uniform({3, 2}, rng, -1, 1));
    store.create("b.th", Tensor::full({1}, 0.75), false);
    RunConfig cfg = toy_config();
    cfg.fusion_strategy = "concat";

    save_checkpoint("/tmp/spikefuse_test.ckpt", store, cfg);
    Checkpoint loaded = load_checkpoint("/tmp/spikefuse_test.ckpt");
    CHECK(loaded.config.fusion_strategy == "concat");
    CHECK(loaded.config.d_dim == cfg.d_dim);
    CHECK(loaded.store.size() == 2);
    CHECK(loaded.store.at("a.w").data == store.at("a.w").data);
    CHECK(loaded.store.at("a.w").shape == store.at("a.w").shape);
    CHECK(loaded.store.trainable("b.th") == false);
    CHECK(loaded.store.at("b.th").data[0] == 0.75);
    std::remove("/tmp/spikefuse_test.ckpt");

    std::ofstream junk("/tmp/spikefuse_junk.ckpt", std::ios::binary);
    junk << "not a checkpoint at all";
    junk.close();
    CHECK_THROWS_AS(load_checkpoint("/tmp/spikefuse_junk.ckpt"), ParseError);
    std::remove("/tmp/spikefuse_junk.ckpt");
}

TEST_CASE("model construction enforces the stride contract") {
    RunConfig bad = toy_config();
    bad.snn_convl = "C4k11s4p5";  // cumulative stride 4
    CHECK_THROWS_AS(TrackerModel{bad}, ConfigError);
    bad = toy_config();
    bad.ann_high = "C8k3s1p1";  // no extra downsampling
    CHECK_THROWS_AS(TrackerModel{bad}, ConfigError);
}

TEST_CASE("model initialization is deterministic in the seed") {
    RunConfig cfg = toy_config();
    TrackerModel a(cfg), b(cfg);
    a.init_params();
    b.init_params();
    CHECK(a.store().size() == b.store().size());
    a.store().for_each([&](const std::string& id, const ParameterStore::Entry& e) {
        CHECK(b.store().at(id).data == e.tensor.data);
    });
    CHECK_THROWS_AS(a.init_params(), ConfigError);
}

TEST_CASE("fused features have the documented strides for every strategy") {
    auto seq = toy_sequence(11);
    for (const char* strategy : {"tff", "concat", "add"}) {
        RunConfig cfg = toy_config();
        cfg.fusion_strategy = strategy;
        TrackerModel model(cfg);
        model.init_params();
        Forward fwd(model.store());
        auto feats = model.features(fwd, seq[0]);
        int c_low = std::string(strategy) == "add" ? 8 : cfg.d_dim;
        int c_high = std::string(strategy) == "add" ? 8 : cfg.d_dim;
        CHECK(fwd.tape.shape(feats.low) == std::vector<int>{c_low, 8, 8});
        CHECK(fwd.tape.shape(feats.high) == std::vector<int>{c_high, 4, 4});
    }
}

TEST_CASE("checkpoint adoption validates the parameter inventory") {
    RunConfig cfg = toy_config();
    TrackerModel trained(cfg);
    trained.init_params();
    save_checkpoint("/tmp/spikefuse_model.ckpt", trained.store(), cfg);

    Checkpoint loaded = load_checkpoint("/tmp/spikefuse_model.ckpt");
    TrackerModel fresh(loaded.config);
    fresh.adopt_store(std::move(loaded.store));
    Forward fwd(fresh.store());
    auto seq = toy_sequence(12);
    auto feats = fresh.features(fwd, seq[0]);
    CHECK(fwd.tape.shape(feats.low)[1] == 8);

    Checkpoint again = load_checkpoint("/tmp/spikefuse_model.ckpt");
    RunConfig other = cfg;
    other.d_dim = 32;  // different topology
    TrackerModel mismatched(other);
    CHECK_THROWS_AS(mismatched.adopt_store(std::move(again.store)), ConfigError);
    std::remove("/tmp/spikefuse_model.ckpt");
}

TEST_CASE("spike thresholds stay clamped after updates") {
    RunConfig cfg = toy_config();
    TrackerModel model(cfg);
    model.init_params();
    model.store().at("snn.convl.0.u_th").data[0] = -0.2;
    model.clamp_thresholds();
    CHECK(model.store().at("snn.convl.0.u_th").data[0] == 1e-3);
}

TEST_CASE("training runs, logs, and is reproducible from the seed") {
    RunConfig cfg = toy_config();
    auto seq = toy_sequence(cfg.seed + 100);
    std::vector<std::vector<MultimodalSample>> data{seq};

    TrackerModel a(cfg);
    a.init_params();
    auto ra = train_model(a, data, "/tmp/spikefuse_loss.txt");
    CHECK(ra.losses.size() == 2);
    for (double v : ra.losses) CHECK(std::isfinite(v));
    std::ifstream log("/tmp/spikefuse_loss.txt");
    std::string header;
    std::getline(log, header);
    CHECK(header.rfind("# step", 0) == 0);
    std::remove("/tmp/spikefuse_loss.txt");

    TrackerModel b(cfg);
    b.init_params();
    auto rb = train_model(b, data);
    CHECK(ra.losses == rb.losses);  // bit-identical curves
}

TEST_CASE("no updates means a constant loss curve") {
    RunConfig cfg = toy_config();
    cfg.frames = 2;  // single template/search pair
    auto seq = toy_sequence(cfg.seed + 5, 2);
    std::vector<std::vector<MultimodalSample>> data{seq};

    TrackerModel model(cfg);
    model.init_params();
    // Emulate a zero learning rate: evaluate the same pair repeatedly
    // without applying any optimizer step.
    std::vector<double> curve;
    for (int step = 0; step < 3; ++step) {
        Forward fwd(model.store());
        Rng jitter(99);  // same candidates every step
        auto parts = model.pair_loss(fwd, seq[0], seq[1], jitter, 4);
        curve.push_back(fwd.tape.val(parts.total).data[0]);
    }
    CHECK(curve[0] == curve[1]);
    CHECK(curve[1] == curve[2]);
}

TEST_CASE("tracker produces well-formed results on an untrained model") {
    RunConfig cfg = toy_config();
    TrackerModel model(cfg);
    model.init_params();
    auto seq = toy_sequence(13, 5);
    auto results = run_tracker(model, seq);
    CHECK(results.size() == 4);
    for (const auto& r : results) {
        CHECK(r.overlap >= 0.0);
        CHECK(r.overlap <= 1.0);
        CHECK(r.center_error >= 0.0);
        CHECK(r.box.w > 0.0);
    }
}

TEST_CASE("sequences survive the disk round trip") {
    SynthParams p;
    p.seed = 31;
    p.frames = 4;
    p.width = p.height = 64;
    p.n_slices = 3;
    SynthSequence seq = synth_sequence(p);

    std::string dir = "/tmp/spikefuse_seq";
    std::filesystem::remove_all(dir);
    save_sequence(dir, seq, p.n_slices);
    SynthSequence back = load_sequence(dir);

    REQUIRE(back.samples.size() == seq.samples.size());
    CHECK(back.events.events.size() == seq.events.events.size());
    for (size_t i = 0; i < seq.samples.size(); ++i) {
        // polarity slices rebuild exactly from the event log
        REQUIRE(back.samples[i].slices.size() == seq.samples[i].slices.size());
        for (size_t j = 0; j < seq.samples[i].slices.size(); ++j)
            CHECK(back.samples[i].slices[j].pixels == seq.samples[i].slices[j].pixels);
        // frames are 8-bit quantized on disk
        for (size_t k = 0; k < seq.samples[i].frame.data.size(); ++k)
            CHECK(std::fabs(back.samples[i].frame.data[k] - seq.samples[i].frame.data[k]) <=
                  0.5 / 255.0 + 1e-12);
        CHECK(std::fabs(back.samples[i].ground_truth_box.cx -
                        seq.samples[i].ground_truth_box.cx) <= 1e-3);
    }
    auto dirs = list_sequence_dirs("/tmp");
    bool found = false;
    for (const auto& d : dirs) found = found || d == dir;
    CHECK(found);
    std::filesystem::remove_all(dir);
}

TEST_CASE("training aborts with a diagnostic when the loss diverges") {
    RunConfig cfg = toy_config();
    auto seq = toy_sequence(cfg.seed + 100);
    std::vector<std::vector<MultimodalSample>> data{seq};
    TrackerModel model(cfg);
    model.init_params();
    // poison a head parameter (the rectifier stages would mask a backbone NaN)
    model.store().at("heads.cls.proj.w").data[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train_model(model, data), doctest::Contains("non-finite"), DomainError);
}

TEST_SUITE_END();
