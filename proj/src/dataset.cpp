#include "spikefuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "spikefuse/config.hpp"

namespace fs = std::filesystem;

namespace spikefuse {

void save_sequence(const std::string& dir, const SynthSequence& sequence, int n_slices) {
    fs::create_directories(fs::path(dir) / "frames");

    const EventStream& ev = sequence.events;
    {
        KeyValues meta;
        meta.set("width", std::to_string(ev.width));
        meta.set("height", std::to_string(ev.height));
        meta.set("frames", std::to_string(sequence.samples.size()));
        meta.set("n_slices", std::to_string(n_slices));
        std::ofstream out(fs::path(dir) / "meta.txt");
        out << meta.to_text();
    }
    {
        std::ofstream out(fs::path(dir) / "events.csv");
        out << "x,y,t,p\n";
        for (const Event& e : ev.events)
            out << e.x << "," << e.y << "," << e.t << "," << e.p << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "exposures.txt");
        for (int64_t t : sequence.exposures) out << t << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "groundtruth.txt");
        for (const auto& sample : sequence.samples) {
            const BBox& b = sample.ground_truth_box;
            out << b.cx << " " << b.cy << " " << b.w << " " << b.h << "\n";
        }
    }
    for (size_t i = 0; i < sequence.samples.size(); ++i) {
        const Tensor& frame = sequence.samples[i].frame;
        std::vector<uint8_t> pixels(frame.data.size());
        for (size_t j = 0; j < frame.data.size(); ++j)
            pixels[j] = static_cast<uint8_t>(
                std::lround(std::min(1.0, std::max(0.0, frame.data[j])) * 255.0));
        char name[32];
        std::snprintf(name, sizeof(name), "f_%04zu.pgm", i);
        write_pgm((fs::path(dir) / "frames" / name).string(), frame.shape[2], frame.shape[1],
                  pixels);
    }
}

SynthSequence load_sequence(const std::string& dir) {
    KeyValues meta = KeyValues::parse_file((fs::path(dir) / "meta.txt").string());
    int width = meta.get("width", 0);
    int height = meta.get("height", 0);
    int frames = meta.get("frames", 0);
    int n_slices = meta.get("n_slices", 0);
    if (width <= 0 || height <= 0 || frames < 2 || n_slices < 1)
        throw ParseError("invalid sequence metadata in " + dir);

    SynthSequence seq;
    seq.events = parse_event_csv((fs::path(dir) / "events.csv").string(), width, height);

    {
        std::ifstream in(fs::path(dir) / "exposures.txt");
        if (!in) throw ParseError("missing exposures.txt in " + dir);
        int64_t t;
        while (in >> t) seq.exposures.push_back(t);
    }
    if (static_cast<int>(seq.exposures.size()) != frames + 1)
        throw ParseError("expected " + std::to_string(frames + 1) + " exposure times in " + dir);

    std::vector<BBox> boxes;
    {
        std::ifstream in(fs::path(dir) / "groundtruth.txt");
        if (!in) throw ParseError("missing groundtruth.txt in " + dir);
        BBox b;
        while (in >> b.cx >> b.cy >> b.w >> b.h) boxes.push_back(b);
    }
    if (static_cast<int>(boxes.size()) != frames)
        throw ParseError("expected " + std::to_string(frames) + " annotation lines in " + dir);

    auto slice_groups = aggregate_sequence(seq.events, seq.exposures, n_slices);

    for (int i = 0; i < frames; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "f_%04d.pgm", i);
        int w = 0, h = 0;
        auto pixels = read_pgm((fs::path(dir) / "frames" / name).string(), w, h);
        if (w != width || h != height) throw ParseError("frame extent mismatch in " + dir);
        MultimodalSample sample;
        sample.frame = Tensor({1, height, width});
        for (size_t j = 0; j < pixels.size(); ++j)
            sample.frame.data[j] = static_cast<double>(pixels[j]) / 255.0;
        sample.slices = std::move(slice_groups[static_cast<size_t>(i)]);
        sample.ground_truth_box = boxes[static_cast<size_t>(i)];
        seq.samples.push_back(std::move(sample));
    }
    return seq;
}

std::vector<std::string> list_sequence_dirs(const std::string& root) {
    std::vector<std::string> dirs;
    if (!fs::is_directory(root)) throw ParseError("not a directory: " + root);
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "meta.txt"))
            dirs.push_back(entry.path().string());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

}  // namespace spikefuse
