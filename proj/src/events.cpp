#include "spikefuse/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spikefuse/errors.hpp"

namespace spikefuse {

namespace {

bool parse_int64(const std::string& s, int64_t& out) {
    if (s.empty()) return false;
    size_t pos = 0;
    try {
        out = std::stoll(s, &pos);
    } catch (...) {
        return false;
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return pos == s.size();
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

EventStream parse_event_csv(const std::string& path, int width, int height) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open event file: " + path);
    if (width <= 0 || height <= 0) throw ConfigError("sensor extent must be positive");

    EventStream stream;
    stream.width = width;
    stream.height = height;

    std::string line;
    int line_no = 0;
    bool first_content_line = true;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = trim(line);
        if (body.empty()) continue;

        std::vector<std::string> fields;
        std::stringstream ss(body);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(trim(field));

        int64_t vals[4];
        bool numeric = fields.size() == 4;
        for (int i = 0; numeric && i < 4; ++i) numeric = parse_int64(fields[i], vals[i]);

        if (!numeric) {
            // A single leading header line is allowed.
            if (first_content_line) {
                first_content_line = false;
                continue;
            }
            throw ParseError("line " + std::to_string(line_no) + ": expected x,y,t,p");
        }
        first_content_line = false;

        if (vals[3] != -1 && vals[3] != 1)
            throw ParseError("line " + std::to_string(line_no) + ": polarity must be -1 or 1, got " +
                             std::to_string(vals[3]));
        if (vals[2] < 0)
            throw ParseError("line " + std::to_string(line_no) + ": negative timestamp");
        if (vals[0] < 0 || vals[0] >= width || vals[1] < 0 || vals[1] >= height)
            throw BoundsError("line " + std::to_string(line_no) + ": coordinate (" +
                              std::to_string(vals[0]) + "," + std::to_string(vals[1]) +
                              ") outside " + std::to_string(width) + "x" + std::to_string(height));

        stream.events.push_back(Event{static_cast<int>(vals[0]), static_cast<int>(vals[1]),
                                      vals[2], static_cast<int>(vals[3])});
    }
    std::stable_sort(stream.events.begin(), stream.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    return stream;
}

namespace {

// Latest-event aggregation over a contiguous, time-sorted index range.
// Ties on one pixel resolve to the event appearing later in the stream.
AggregatedSlice aggregate_range(const EventStream& stream, size_t begin, size_t end,
                                double t0, double t1) {
    AggregatedSlice slice;
    slice.width = stream.width;
    slice.height = stream.height;
    slice.window_start = t0;
    slice.window_end = t1;
    slice.pixels.assign(static_cast<size_t>(stream.width) * stream.height, 127);

    std::vector<int64_t> latest(slice.pixels.size(), -1);
    for (size_t i = begin; i < end; ++i) {
        const Event& e = stream.events[i];
        size_t idx = static_cast<size_t>(e.y) * stream.width + e.x;
        if (e.t >= latest[idx]) {
            latest[idx] = e.t;
            slice.pixels[idx] = static_cast<uint8_t>((e.p + 1) * 127);
        }
    }
    return slice;
}

size_t lower_index(const EventStream& stream, int64_t t) {
    auto it = std::lower_bound(stream.events.begin(), stream.events.end(), t,
                               [](const Event& e, int64_t v) { return e.t < v; });
    return static_cast<size_t>(it - stream.events.begin());
}

size_t upper_index(const EventStream& stream, int64_t t) {
    auto it = std::upper_bound(stream.events.begin(), stream.events.end(), t,
                               [](int64_t v, const Event& e) { return v < e.t; });
    return static_cast<size_t>(it - stream.events.begin());
}

}  // namespace

AggregatedSlice aggregate_window(const EventStream& stream, int64_t t0, int64_t t1) {
    if (t0 >= t1) throw ConfigError("window: start must precede end");
    size_t begin = lower_index(stream, t0);
    size_t end = upper_index(stream, t1);  // closed window
    return aggregate_range(stream, begin, end, static_cast<double>(t0),
                           static_cast<double>(t1));
}

std::vector<std::vector<AggregatedSlice>> aggregate_sequence(
    const EventStream& stream, const std::vector<int64_t>& exposure_times, int n) {
    if (n <= 0) throw ConfigError("temporal resolution must be >= 1");
    if (exposure_times.size() < 2)
        throw ConfigError("need at least two exposure times");
    for (size_t i = 1; i < exposure_times.size(); ++i)
        if (exposure_times[i] <= exposure_times[i - 1])
            throw ConfigError("exposure times must be strictly increasing");

    std::vector<std::vector<AggregatedSlice>> out;
    out.reserve(exposure_times.size() - 1);
    for (size_t i = 0; i + 1 < exposure_times.size(); ++i) {
        int64_t ti = exposure_times[i];
        int64_t tn = exposure_times[i + 1];
        int64_t span = tn - ti;
        double width = static_cast<double>(span) / n;

        std::vector<AggregatedSlice> slices;
        slices.reserve(static_cast<size_t>(n));
        size_t base = lower_index(stream, ti);
        size_t stop = upper_index(stream, tn);
        size_t cursor = base;
        for (int j = 0; j < n; ++j) {
            // Window membership in exact integer arithmetic:
            // event t falls in window j iff (t - ti) * n is in
            // [j*span, (j+1)*span), with the final window closed on the right.
            size_t begin = cursor;
            size_t end = begin;
            if (j + 1 < n) {
                while (end < stop &&
                       (stream.events[end].t - ti) * static_cast<int64_t>(n) <
                           static_cast<int64_t>(j + 1) * span)
                    ++end;
            } else {
                end = stop;
            }
            cursor = end;
            slices.push_back(aggregate_range(stream, begin, end, ti + j * width,
                                             j + 1 == n ? static_cast<double>(tn)
                                                        : ti + (j + 1) * width));
        }
        out.push_back(std::move(slices));
    }
    return out;
}

// ------------------------------------------------------------------ synth

namespace {

// Smooth value-noise texture from a coarse seeded grid, bilinearly sampled.
struct Texture {
    int knots;
    std::vector<double> values;
    double sample(double u, double v) const {  // u, v in [0,1]
        double fx = u * (knots - 1);
        double fy = v * (knots - 1);
        int x0 = std::min(static_cast<int>(fx), knots - 2);
        int y0 = std::min(static_cast<int>(fy), knots - 2);
        double wx = fx - x0, wy = fy - y0;
        auto at = [&](int y, int x) { return values[static_cast<size_t>(y) * knots + x]; };
        return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
               wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    }
};

Texture make_texture(Rng& rng, int knots, double lo, double hi) {
    Texture t;
    t.knots = knots;
    t.values.resize(static_cast<size_t>(knots) * knots);
    for (double& v : t.values) v = rng.uniform(lo, hi);
    return t;
}

// Fraction of pixel (x, y) covered by the box [cx +- s/2, cy +- s/2].
double coverage(double lo, double hi, int pixel) {
    double a = std::max(lo, static_cast<double>(pixel));
    double b = std::min(hi, static_cast<double>(pixel + 1));
    return std::max(0.0, b - a);
}

void paint_square(std::vector<double>& img, int width, int height, double cx, double cy,
                  double size, double intensity) {
    double x0 = cx - size / 2, x1 = cx + size / 2;
    double y0 = cy - size / 2, y1 = cy + size / 2;
    int px0 = std::max(0, static_cast<int>(std::floor(x0)));
    int px1 = std::min(width - 1, static_cast<int>(std::ceil(x1)) - 1);
    int py0 = std::max(0, static_cast<int>(std::floor(y0)));
    int py1 = std::min(height - 1, static_cast<int>(std::ceil(y1)) - 1);
    for (int y = py0; y <= py1; ++y)
        for (int x = px0; x <= px1; ++x) {
            double cov = coverage(x0, x1, x) * coverage(y0, y1, y);
            size_t i = static_cast<size_t>(y) * width + x;
            img[i] = img[i] + cov * (intensity - img[i]);
        }
}

struct Decoy {
    bool present = false;
    double cx = 0.0, cy = 0.0;
    double size = 0.0, intensity = 0.0;
};

void render(const Texture& bg, double cx, double cy, double size, double intensity,
            const Decoy& decoy, int width, int height, std::vector<double>& out) {
    out.resize(static_cast<size_t>(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out[static_cast<size_t>(y) * width + x] =
                bg.sample((x + 0.5) / width, (y + 0.5) / height);
    if (decoy.present)
        paint_square(out, width, height, decoy.cx, decoy.cy, decoy.size, decoy.intensity);
    paint_square(out, width, height, cx, cy, size, intensity);
}

}  // namespace

SynthSequence synth_sequence(const SynthParams& p) {
    if (p.width < 32 || p.height < 32) throw ConfigError("canvas must be at least 32x32");
    if (p.frames < 2) throw ConfigError("need at least 2 frames");
    if (p.target_size >= std::min(p.width, p.height) - 4)
        throw ConfigError("target larger than canvas allows");
    if (p.n_slices < 1) throw ConfigError("temporal resolution must be >= 1");

    Rng rng(p.seed);
    Rng texture_rng = rng.fork(0xbead);
    Rng motion_rng = rng.fork(0xcafe);
    Rng noise_rng = rng.fork(0xfade);

    Texture bg = make_texture(texture_rng, 9, 0.18, 0.55);

    // Per-frame anchor positions: linear motion with wall bounces plus jitter.
    double margin = p.target_size / 2.0 + 2.0;
    double cx = motion_rng.uniform(margin, p.width - margin);
    double cy = motion_rng.uniform(margin, p.height - margin);

    Decoy decoy;
    if (p.decoy_size > 0) {
        decoy.present = true;
        decoy.size = p.decoy_size;
        decoy.intensity = p.decoy_intensity;
        double dm = p.decoy_size / 2.0 + 1.0;
        double min_gap = (p.target_size + p.decoy_size) / 2.0 + 4.0;
        for (int attempt = 0; attempt < 64; ++attempt) {
            decoy.cx = motion_rng.uniform(dm, p.width - dm);
            decoy.cy = motion_rng.uniform(dm, p.height - dm);
            double dx = decoy.cx - cx, dy = decoy.cy - cy;
            if (std::sqrt(dx * dx + dy * dy) >= min_gap) break;
        }
    }
    double angle = motion_rng.uniform(0.0, 2.0 * M_PI);
    double vx = p.speed * std::cos(angle);
    double vy = p.speed * std::sin(angle);

    int anchors = p.frames + 1;
    std::vector<double> xs(static_cast<size_t>(anchors)), ys(static_cast<size_t>(anchors));
    for (int i = 0; i < anchors; ++i) {
        double jx = p.jitter > 0.0 ? motion_rng.normal(0.0, p.jitter) : 0.0;
        double jy = p.jitter > 0.0 ? motion_rng.normal(0.0, p.jitter) : 0.0;
        xs[static_cast<size_t>(i)] = std::min(std::max(cx + jx, margin), p.width - margin);
        ys[static_cast<size_t>(i)] = std::min(std::max(cy + jy, margin), p.height - margin);
        cx += vx;
        cy += vy;
        if (cx < margin || cx > p.width - margin) {
            vx = -vx;
            cx = std::min(std::max(cx, margin), static_cast<double>(p.width) - margin);
        }
        if (cy < margin || cy > p.height - margin) {
            vy = -vy;
            cy = std::min(std::max(cy, margin), static_cast<double>(p.height) - margin);
        }
    }

    SynthSequence seq;
    seq.events.width = p.width;
    seq.events.height = p.height;
    seq.exposures.resize(static_cast<size_t>(anchors));
    for (int i = 0; i < anchors; ++i) seq.exposures[static_cast<size_t>(i)] = i * p.frame_dt;

    // Event generation: compare log intensity between consecutive substeps.
    std::vector<double> prev, cur;
    render(bg, xs[0], ys[0], p.target_size, p.target_intensity, decoy, p.width, p.height, prev);
    auto log_i = [](double v) { return std::log(v + 0.01); };
    for (int i = 0; i < p.frames; ++i) {
        for (int s = 1; s <= p.substeps; ++s) {
            double f = static_cast<double>(s) / p.substeps;
            double px = xs[static_cast<size_t>(i)] + f * (xs[static_cast<size_t>(i) + 1] - xs[static_cast<size_t>(i)]);
            double py = ys[static_cast<size_t>(i)] + f * (ys[static_cast<size_t>(i) + 1] - ys[static_cast<size_t>(i)]);
            render(bg, px, py, p.target_size, p.target_intensity, decoy, p.width, p.height, cur);
            // Substep timestamps sit strictly inside the interval so that no
            // event lands exactly on an exposure boundary.
            int64_t t = i * p.frame_dt + ((2 * s - 1) * p.frame_dt) / (2 * p.substeps);
            for (int y = 0; y < p.height; ++y)
                for (int x = 0; x < p.width; ++x) {
                    size_t idx = static_cast<size_t>(y) * p.width + x;
                    double delta = log_i(cur[idx]) - log_i(prev[idx]);
                    if (std::fabs(delta) >= p.contrast)
                        seq.events.events.push_back(Event{x, y, t, delta > 0 ? 1 : -1});
                    else if (p.noise_rate > 0.0 && noise_rng.uniform() < p.noise_rate)
                        seq.events.events.push_back(
                            Event{x, y, t, noise_rng.uniform() < 0.5 ? 1 : -1});
                }
            std::swap(prev, cur);
        }
    }

    auto slice_groups = aggregate_sequence(seq.events, seq.exposures, p.n_slices);

    std::vector<double> frame_img;
    for (int i = 0; i < p.frames; ++i) {
        MultimodalSample sample;
        render(bg, xs[static_cast<size_t>(i)], ys[static_cast<size_t>(i)], p.target_size,
               p.target_intensity, decoy, p.width, p.height, frame_img);
        sample.frame = Tensor({1, p.height, p.width});
        std::copy(frame_img.begin(), frame_img.end(), sample.frame.data.begin());
        sample.slices = std::move(slice_groups[static_cast<size_t>(i)]);
        sample.ground_truth_box = BBox{xs[static_cast<size_t>(i)], ys[static_cast<size_t>(i)],
                                       static_cast<double>(p.target_size),
                                       static_cast<double>(p.target_size)};
        seq.samples.push_back(std::move(sample));
    }
    return seq;
}

Tensor slice_to_tensor(const AggregatedSlice& slice) {
    Tensor t({1, slice.height, slice.width});
    for (size_t i = 0; i < slice.pixels.size(); ++i)
        t.data[i] = static_cast<double>(slice.pixels[i]) / 254.0;
    return t;
}

void write_pgm(const std::string& path, int width, int height,
               const std::vector<uint8_t>& pixels) {
    if (static_cast<size_t>(width) * height != pixels.size())
        throw ShapeError("pgm pixel count does not match extent");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
}

std::vector<uint8_t> read_pgm(const std::string& path, int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::string magic;
    int maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (magic != "P5" || maxval != 255 || width <= 0 || height <= 0)
        throw ParseError("unsupported pgm header in " + path);
    in.get();  // single whitespace after header
    std::vector<uint8_t> pixels(static_cast<size_t>(width) * height);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!in) throw ParseError("truncated pgm " + path);
    return pixels;
}

}  // namespace spikefuse
