#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace spikefuse {

/// Plain-text `key = value` settings; '#' starts a comment.
class KeyValues {
public:
    static KeyValues parse_file(const std::string& path);
    static KeyValues parse_text(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get(const std::string& key, double fallback) const;
    int get(const std::string& key, int fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    bool get(const std::string& key, bool fallback) const;
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string to_text() const;

private:
    std::map<std::string, std::string> values_;
};

/// Everything a run needs: model topology, training regimen, synthetic-data
/// profile. Defaults follow the full-scale recipe; desk-scale runs override.
struct RunConfig {
    // model
    std::string ann_low = "C64k7s2p3-C64k3s2p1-C128k3s2p1-C128k3s1p1";
    std::string ann_high = "C256k3s2p1-C256k3s1p1";
    std::string snn_convl = "C64k11s4p5-C128k5s2p2-C128k3s1p1";
    std::string snn_convh = "C256k3s2p1";
    int p = 4;
    int d_dim = 512;
    int heads = 2;
    int blocks = 2;
    double mlp_ratio = 4.0;
    double dropout = 0.1;
    std::string fusion_strategy = "tff";
    int score_map_size = 0;  // 0: derived as frame_size / 4
    int iou_mlp_width = 64;
    double beta = 1.0;

    // training
    int epochs = 50;
    int batch_size = 20;
    int steps_per_epoch = 100;
    double lr_backbone = 1e-4;
    double lr_other = 1e-3;
    double lr_decay = 0.9;
    double alpha = 0.7;
    double u_th_init = 1.0;
    uint64_t seed = 1;

    // data
    int frame_size = 64;
    int frames = 60;
    int n_slices = 5;
    int train_sequences = 3;
    double contrast = 0.15;
    double noise_rate = 0.0;
    std::string data_dir;
    std::string out_dir = "out";

    int resolved_score_map_size() const { return score_map_size > 0 ? score_map_size : frame_size / 4; }

    static RunConfig from_kv(const KeyValues& kv);
    KeyValues to_kv() const;
    void validate() const;
};

/// Seed override from the environment (SPIKEFUSE_SEED), when set.
void apply_seed_env(RunConfig& config);

}  // namespace spikefuse
