// spikefuse: desk-scale frame+event hybrid tracker.
//
// Subcommands: train, eval, aggregate, gradcheck, energy, synth.
// Exit status: 0 success, 1 validation failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "spikefuse/checkpoint.hpp"
#include "spikefuse/dataset.hpp"
#include "spikefuse/energy.hpp"
#include "spikefuse/gradcheck_suite.hpp"
#include "spikefuse/track.hpp"
#include "spikefuse/train.hpp"

namespace fs = std::filesystem;
using namespace spikefuse;

namespace {

RunConfig load_config(const std::string& path) {
    if (!fs::exists(path)) throw ParseError("config file not found: " + path);
    RunConfig cfg = RunConfig::from_kv(KeyValues::parse_file(path));
    apply_seed_env(cfg);
    return cfg;
}

std::vector<std::vector<MultimodalSample>> training_data(const RunConfig& cfg) {
    std::vector<std::vector<MultimodalSample>> sequences;
    if (!cfg.data_dir.empty()) {
        for (const auto& dir : list_sequence_dirs(cfg.data_dir))
            sequences.push_back(load_sequence(dir).samples);
        if (sequences.empty())
            throw ConfigError("no sequences found under " + cfg.data_dir);
        return sequences;
    }
    for (int i = 0; i < cfg.train_sequences; ++i) {
        SynthParams p;
        p.seed = cfg.seed + 100 + static_cast<uint64_t>(i);
        p.frames = cfg.frames;
        p.width = p.height = cfg.frame_size;
        p.n_slices = cfg.n_slices;
        p.contrast = cfg.contrast;
        p.noise_rate = cfg.noise_rate;
        sequences.push_back(synth_sequence(p).samples);
    }
    return sequences;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
    RunConfig cfg = load_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    fs::create_directories(cfg.out_dir);

    TrackerModel model(cfg);
    model.init_params();
    std::printf("training: %lld parameters, %d epochs x %d steps, batch %d, strategy %s\n",
                static_cast<long long>(model.store().total_scalars()), cfg.epochs,
                cfg.steps_per_epoch, cfg.batch_size, cfg.fusion_strategy.c_str());

    auto data = training_data(cfg);
    std::string log_path = (fs::path(cfg.out_dir) / "loss_log.txt").string();
    TrainResult result = train_model(model, data, log_path);

    std::string ckpt = (fs::path(cfg.out_dir) / "checkpoint.spk").string();
    save_checkpoint(ckpt, model.store(), cfg);

    double head = smoothed_head(result.losses, 20);
    double tail = smoothed_tail(result.losses, 20);
    std::printf("steps: %zu  first-loss(avg20): %.6f  last-loss(avg20): %.6f\n",
                result.losses.size(), head, tail);
    std::printf("checkpoint: %s\nloss log:   %s\n", ckpt.c_str(), log_path.c_str());
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir) {
    if (!fs::exists(ckpt_path)) throw ParseError("checkpoint not found: " + ckpt_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    TrackerModel model(ckpt.config);
    model.adopt_store(std::move(ckpt.store));

    std::vector<TrackResult> all;
    auto dirs = list_sequence_dirs(data_dir);
    if (dirs.empty()) throw ConfigError("no sequences found under " + data_dir);
    for (const auto& dir : dirs) {
        auto seq = load_sequence(dir);
        auto results = run_tracker(model, seq.samples);
        std::printf("%s: %zu frames tracked\n", dir.c_str(), results.size());
        all.insert(all.end(), results.begin(), results.end());
    }
    MetricSummary m = evaluate_metrics(all);
    std::printf("PR(20px) = %.4f\nSR       = %.4f\nOP50     = %.4f\nOP75     = %.4f\n", m.pr,
                m.sr, m.op50, m.op75);
    fs::create_directories(out_dir);
    write_curve((fs::path(out_dir) / "success_curve.txt").string(), 0.0, 0.01, m.success_curve);
    write_curve((fs::path(out_dir) / "precision_curve.txt").string(), 0.0, 1.0,
                m.precision_curve);
    std::printf("curves written under %s\n", out_dir.c_str());
    return 0;
}

int cmd_aggregate(const std::string& events_path, const std::string& out_dir, int n, int width,
                  int height) {
    if (!fs::exists(events_path)) throw ParseError("event file not found: " + events_path);
    EventStream stream = parse_event_csv(events_path, width, height);
    int64_t t0 = 0, t1 = 1;
    if (!stream.events.empty()) {
        t0 = stream.events.front().t;
        t1 = stream.events.back().t + 1;
    }
    auto groups = aggregate_sequence(stream, {t0, t1}, n);
    fs::create_directories(out_dir);
    for (size_t j = 0; j < groups[0].size(); ++j) {
        char name[32];
        std::snprintf(name, sizeof(name), "slice_%03zu.pgm", j);
        const AggregatedSlice& slice = groups[0][j];
        write_pgm((fs::path(out_dir) / name).string(), slice.width, slice.height, slice.pixels);
    }
    std::printf("wrote %zu slices to %s (window [%lld, %lld])\n", groups[0].size(),
                out_dir.c_str(), static_cast<long long>(t0), static_cast<long long>(t1));
    return 0;
}

int cmd_gradcheck(const std::string& module) {
    auto outcomes = run_gradcheck_suite(module);
    if (outcomes.empty()) throw ConfigError("no checks match module '" + module + "'");
    bool all_ok = true;
    for (const auto& o : outcomes) {
        if (o.tolerance == 0.0)
            std::printf("%-28s err=%.3e tol=exact  %s\n", o.name.c_str(), o.max_rel_error,
                        o.passed ? "ok" : "FAIL");
        else
            std::printf("%-28s max_rel_err=%.3e tol=%.0e  %s\n", o.name.c_str(),
                        o.max_rel_error, o.tolerance, o.passed ? "ok" : "FAIL");
        all_ok = all_ok && o.passed;
    }
    if (!all_ok) throw DomainError("gradient check failed");
    return 0;
}

int cmd_energy(const std::string& config_path, const std::string& ckpt_path) {
    RunConfig cfg;
    TrackerModel* model_ptr = nullptr;
    std::unique_ptr<TrackerModel> model;
    if (!ckpt_path.empty()) {
        if (!fs::exists(ckpt_path)) throw ParseError("checkpoint not found: " + ckpt_path);
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        cfg = ckpt.config;
        model = std::make_unique<TrackerModel>(cfg);
        model->adopt_store(std::move(ckpt.store));
        model_ptr = model.get();
    } else {
        cfg = load_config(config_path);
        model = std::make_unique<TrackerModel>(cfg);
        model->init_params();
        model_ptr = model.get();
    }

    // Firing rates measured on a few seeded synthetic samples.
    SynthParams p;
    p.seed = cfg.seed + 900;
    p.frames = 4;
    p.width = p.height = cfg.frame_size;
    p.n_slices = cfg.n_slices;
    auto samples = synth_sequence(p).samples;

    std::vector<std::vector<Tensor>> trains;  // per consuming layer
    for (int s = 0; s < 3; ++s) {
        auto per_layer = model_ptr->probe_spike_trains(samples[static_cast<size_t>(s)]);
        if (trains.empty()) trains.resize(per_layer.size() - 1);
        for (size_t l = 0; l + 1 < per_layer.size(); ++l)
            for (auto& t : per_layer[l]) trains[l].push_back(std::move(t));
    }
    FiringRateStats fr = measure_firing_rate(trains);

    EnergyReport report = energy_report(model_ptr->snn_as_dense_specs(),
                                        model_ptr->snn_layer_specs(), fr, cfg.n_slices);
    std::printf("%s", energy_report_text(report).c_str());
    std::printf("frame-branch dense MACs per forward: %.0f\n",
                count_ann_macs(model_ptr->ann_layer_specs()));
    std::printf("firing rates:");
    for (double r : fr.fr) std::printf(" %.4f", r);
    std::printf("\n---\n%s", energy_report_kv(report).c_str());
    return 0;
}

int cmd_synth(uint64_t seed, const std::string& out_dir, int frames, int size, int n,
              int sequences) {
    for (int i = 0; i < sequences; ++i) {
        SynthParams p;
        p.seed = seed + static_cast<uint64_t>(i);
        p.frames = frames;
        p.width = p.height = size;
        p.n_slices = n;
        SynthSequence seq = synth_sequence(p);
        char name[32];
        std::snprintf(name, sizeof(name), "seq_%03d", i);
        save_sequence((fs::path(out_dir) / name).string(), seq, n);
        std::printf("%s: %d frames, %zu events\n", name, frames, seq.events.events.size());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spikefuse: frame+event hybrid tracker (training, evaluation, tooling)"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, data_dir, events_path, module;
    int n = 5, width = 346, height = 260;
    uint64_t seed = 1;
    int frames = 60, size = 64, sequences = 1;

    auto* train = app.add_subcommand("train", "train a tracker from a config file");
    train->add_option("--config", config_path, "key = value run configuration")->required();
    train->add_option("--out", out_dir, "output directory override");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a sequence directory");
    eval->add_option("--checkpoint", ckpt_path)->required();
    eval->add_option("--data", data_dir, "directory of sequence subdirectories")->required();
    eval->add_option("--out", out_dir, "where to write metric curves");

    auto* aggregate = app.add_subcommand("aggregate", "aggregate an event CSV into slices");
    aggregate->add_option("--events", events_path, "CSV with x,y,t,p lines")->required();
    aggregate->add_option("--out", out_dir)->required();
    aggregate->add_option("--n", n, "number of windows");
    aggregate->add_option("--width", width);
    aggregate->add_option("--height", height);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--module", module, "filter checks by name substring");

    auto* energy = app.add_subcommand("energy", "operation counts and energy estimate");
    energy->add_option("--config", config_path);
    energy->add_option("--checkpoint", ckpt_path);

    auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
    synth->add_option("--seed", seed);
    synth->add_option("--out", out_dir)->required();
    synth->add_option("--frames", frames);
    synth->add_option("--size", size);
    synth->add_option("--n", n);
    synth->add_option("--sequences", sequences);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version exit clean, usage errors exit 2
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(config_path, out_dir);
        if (app.got_subcommand(eval))
            return cmd_eval(ckpt_path, data_dir, out_dir.empty() ? "out" : out_dir);
        if (app.got_subcommand(aggregate))
            return cmd_aggregate(events_path, out_dir, n, width, height);
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(module);
        if (app.got_subcommand(energy)) {
            if (config_path.empty() && ckpt_path.empty())
                throw ConfigError("energy needs --config or --checkpoint");
            return cmd_energy(config_path, ckpt_path);
        }
        if (app.got_subcommand(synth)) return cmd_synth(seed, out_dir, frames, size, n, sequences);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return 2;
}
