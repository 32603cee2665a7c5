#include "spikefuse/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spikefuse/errors.hpp"

namespace spikefuse {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

KeyValues KeyValues::parse_text(const std::string& text) {
    KeyValues kv;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string body = trim(line);
        if (body.empty()) continue;
        size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(body.substr(0, eq));
        std::string value = trim(body.substr(eq + 1));
        if (key.empty()) throw ParseError("config line " + std::to_string(line_no) + ": empty key");
        kv.values_[key] = value;
    }
    return kv;
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValues::get(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw ParseError("config key '" + key + "' is not a number: " + it->second);
    }
}

int KeyValues::get(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw ParseError("config key '" + key + "' is not an integer: " + it->second);
    }
}

uint64_t KeyValues::get_u64(const std::string& key, uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (...) {
        throw ParseError("config key '" + key + "' is not an integer: " + it->second);
    }
}

bool KeyValues::get(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ParseError("config key '" + key + "' is not a boolean: " + v);
}

std::string KeyValues::to_text() const {
    std::ostringstream os;
    for (const auto& [key, value] : values_) os << key << " = " << value << "\n";
    return os.str();
}

RunConfig RunConfig::from_kv(const KeyValues& kv) {
    RunConfig c;
    c.ann_low = kv.get("ann_low", c.ann_low);
    c.ann_high = kv.get("ann_high", c.ann_high);
    c.snn_convl = kv.get("snn_convl", c.snn_convl);
    c.snn_convh = kv.get("snn_convh", c.snn_convh);
    c.p = kv.get("p", c.p);
    c.d_dim = kv.get("d_dim", c.d_dim);
    c.heads = kv.get("heads", c.heads);
    c.blocks = kv.get("blocks", c.blocks);
    c.mlp_ratio = kv.get("mlp_ratio", c.mlp_ratio);
    c.dropout = kv.get("dropout", c.dropout);
    c.fusion_strategy = kv.get("fusion_strategy", c.fusion_strategy);
    c.score_map_size = kv.get("score_map_size", c.score_map_size);
    c.iou_mlp_width = kv.get("iou_mlp_width", c.iou_mlp_width);
    c.beta = kv.get("beta", c.beta);
    c.epochs = kv.get("epochs", c.epochs);
    c.batch_size = kv.get("batch_size", c.batch_size);
    c.steps_per_epoch = kv.get("steps_per_epoch", c.steps_per_epoch);
    c.lr_backbone = kv.get("lr_backbone", c.lr_backbone);
    c.lr_other = kv.get("lr_other", c.lr_other);
    c.lr_decay = kv.get("lr_decay", c.lr_decay);
    c.alpha = kv.get("alpha", c.alpha);
    c.u_th_init = kv.get("u_th_init", c.u_th_init);
    c.seed = kv.get_u64("seed", c.seed);
    c.frame_size = kv.get("frame_size", c.frame_size);
    c.frames = kv.get("frames", c.frames);
    c.n_slices = kv.get("n_slices", c.n_slices);
    c.train_sequences = kv.get("train_sequences", c.train_sequences);
    c.contrast = kv.get("contrast", c.contrast);
    c.noise_rate = kv.get("noise_rate", c.noise_rate);
    c.data_dir = kv.get("data_dir", c.data_dir);
    c.out_dir = kv.get("out_dir", c.out_dir);
    c.validate();
    return c;
}

KeyValues RunConfig::to_kv() const {
    KeyValues kv;
    auto num = [&](const std::string& key, double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        kv.set(key, os.str());
    };
    kv.set("ann_low", ann_low);
    kv.set("ann_high", ann_high);
    kv.set("snn_convl", snn_convl);
    kv.set("snn_convh", snn_convh);
    kv.set("p", std::to_string(p));
    kv.set("d_dim", std::to_string(d_dim));
    kv.set("heads", std::to_string(heads));
    kv.set("blocks", std::to_string(blocks));
    num("mlp_ratio", mlp_ratio);
    num("dropout", dropout);
    kv.set("fusion_strategy", fusion_strategy);
    kv.set("score_map_size", std::to_string(score_map_size));
    kv.set("iou_mlp_width", std::to_string(iou_mlp_width));
    num("beta", beta);
    kv.set("epochs", std::to_string(epochs));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("steps_per_epoch", std::to_string(steps_per_epoch));
    num("lr_backbone", lr_backbone);
    num("lr_other", lr_other);
    num("lr_decay", lr_decay);
    num("alpha", alpha);
    num("u_th_init", u_th_init);
    kv.set("seed", std::to_string(seed));
    kv.set("frame_size", std::to_string(frame_size));
    kv.set("frames", std::to_string(frames));
    kv.set("n_slices", std::to_string(n_slices));
    kv.set("train_sequences", std::to_string(train_sequences));
    num("contrast", contrast);
    num("noise_rate", noise_rate);
    if (!data_dir.empty()) kv.set("data_dir", data_dir);
    kv.set("out_dir", out_dir);
    return kv;
}

void RunConfig::validate() const {
    if (lr_backbone <= 0.0 || lr_other <= 0.0)
        throw ConfigError("learning rates must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("lr decay must lie in (0,1]");
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("alpha must lie in (0,1)");
    if (u_th_init <= 0.0) throw ConfigError("threshold init must be positive");
    if (epochs < 1 || batch_size < 1 || steps_per_epoch < 1)
        throw ConfigError("epochs, batch size and steps per epoch must be >= 1");
    if (n_slices < 1) throw ConfigError("n_slices must be >= 1");
    if (beta < 0.0) throw ConfigError("beta must be nonnegative");
}

void apply_seed_env(RunConfig& config) {
    const char* env = std::getenv("SPIKEFUSE_SEED");
    if (!env || !*env) return;
    try {
        config.seed = std::stoull(env);
    } catch (...) {
        throw ParseError("SPIKEFUSE_SEED is not an integer: " + std::string(env));
    }
}

}  // namespace spikefuse
