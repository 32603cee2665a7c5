#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikefuse/geometry.hpp"
#include "spikefuse/rng.hpp"
#include "spikefuse/tensor.hpp"

namespace spikefuse {

/// One asynchronous brightness-change record.
struct Event {
    int x = 0;
    int y = 0;
    int64_t t = 0;  // microseconds
    int p = 0;      // polarity, -1 or +1
};

struct EventStream {
    int width = 0;
    int height = 0;
    std::vector<Event> events;  // nondecreasing in t
};

/// Frame-shaped polarity image: 127 where a pixel saw no event in the
/// window, 254 when the latest event was positive, 0 when negative.
struct AggregatedSlice {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels;
    double window_start = 0.0;
    double window_end = 0.0;

    uint8_t at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
    uint8_t& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
};

/// A light-intensity frame paired with the polarity slices covering the
/// interval that follows it, plus the target annotation at exposure time.
struct MultimodalSample {
    Tensor frame;  // CxHxW, values in [0,1]
    std::vector<AggregatedSlice> slices;
    BBox ground_truth_box;
};

/// Reads `x,y,t,p` lines (optional header). Events are returned sorted by
/// timestamp with a stable sort, so on-disk order breaks ties.
EventStream parse_event_csv(const std::string& path, int width, int height);

/// Latest-event polarity image over the closed window [t0, t1].
AggregatedSlice aggregate_window(const EventStream& stream, int64_t t0, int64_t t1);

/// Splits each interval [T_i, T_{i+1}] into n equal windows. Interior
/// boundaries are half-open toward the later window; the last window of an
/// interval is closed. Returns one list of n slices per interval.
std::vector<std::vector<AggregatedSlice>> aggregate_sequence(
    const EventStream& stream, const std::vector<int64_t>& exposure_times, int n);

struct SynthParams {
    uint64_t seed = 1;
    int frames = 60;
    int width = 64;
    int height = 64;
    int n_slices = 5;
    double contrast = 0.15;     // log-intensity threshold for event emission
    double noise_rate = 0.0;    // per pixel per substep
    int substeps = 8;
    int64_t frame_dt = 10000;   // microseconds between exposures
    double speed = 1.5;         // px per frame
    double jitter = 0.3;        // px, per-frame position noise
    int target_size = 20;       // px, square side
    double target_intensity = 0.92;
    // Optional stationary bright square that resembles the target in the
    // frame modality but emits no events; 0 disables it.
    int decoy_size = 0;
    double decoy_intensity = 0.8;
};

struct SynthSequence {
    EventStream events;
    std::vector<int64_t> exposures;       // frames + 1 entries
    std::vector<MultimodalSample> samples;
};

/// A bright square on a textured background with linear motion plus seeded
/// jitter; events come from log-intensity changes between substeps.
SynthSequence synth_sequence(const SynthParams& params);

/// Slice values scaled to [0,1] as a 1xHxW tensor (divide by 254).
Tensor slice_to_tensor(const AggregatedSlice& slice);

void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& pixels);
std::vector<uint8_t> read_pgm(const std::string& path, int& width, int& height);

}  // namespace spikefuse
