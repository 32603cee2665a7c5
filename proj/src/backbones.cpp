#include "spikefuse/backbones.hpp"

#include <cmath>
#include <sstream>

namespace spikefuse {

// ------------------------------------------------------------ compact specs

std::vector<ConvSpec> parse_conv_stack(const std::string& text) {
    std::vector<ConvSpec> stack;
    std::stringstream ss(text);
    std::string token;
    while (std::getline(ss, token, '-')) {
        if (token.empty()) continue;
        if (token == "BN") {
            if (stack.empty()) throw ParseError("BN token before any conv layer in '" + text + "'");
            stack.back().bn = true;
            continue;
        }
        // CxxkxxsxxPxx, e.g. C64k11s4p5
        ConvSpec spec;
        size_t i = 0;
        auto read_field = [&](char tag) {
            if (i >= token.size() || token[i] != tag)
                throw ParseError("expected '" + std::string(1, tag) + "' in layer token '" +
                                 token + "'");
            ++i;
            size_t start = i;
            while (i < token.size() && std::isdigit(static_cast<unsigned char>(token[i]))) ++i;
            if (start == i) throw ParseError("missing number after '" + std::string(1, tag) +
                                             "' in '" + token + "'");
            return std::stoi(token.substr(start, i - start));
        };
        spec.out_channels = read_field('C');
        spec.kernel = read_field('k');
        spec.stride = read_field('s');
        spec.padding = read_field('p');
        if (i != token.size()) throw ParseError("trailing characters in layer token '" + token + "'");
        if (spec.out_channels < 1 || spec.kernel < 1 || spec.stride < 1 || spec.padding < 0)
            throw ParseError("invalid layer dimensions in '" + token + "'");
        stack.push_back(spec);
    }
    if (stack.empty()) throw ParseError("empty layer stack '" + text + "'");
    return stack;
}

std::string conv_stack_to_string(const std::vector<ConvSpec>& stack) {
    std::ostringstream os;
    for (size_t i = 0; i < stack.size(); ++i) {
        if (i) os << "-";
        os << "C" << stack[i].out_channels << "k" << stack[i].kernel << "s" << stack[i].stride
           << "p" << stack[i].padding;
        if (stack[i].bn) os << "-BN";
    }
    return os.str();
}

int stack_stride(const std::vector<ConvSpec>& stack) {
    int s = 1;
    for (const auto& spec : stack) s *= spec.stride;
    return s;
}

std::pair<int, int> stack_output_extent(const std::vector<ConvSpec>& stack, int h, int w) {
    for (const auto& spec : stack) {
        h = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        w = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        if (h < 1 || w < 1) throw ShapeError("conv stack shrinks input below 1x1");
    }
    return {h, w};
}

// -------------------------------------------------------------- param setup

namespace {

void create_conv_params(ParameterStore& store, Rng& rng, const std::string& base,
                        const ConvSpec& spec, int in_channels) {
    double bound = std::sqrt(1.0 / (in_channels * spec.kernel * spec.kernel));
    store.create(base + ".w",
                 Tensor::uniform({spec.out_channels, in_channels, spec.kernel, spec.kernel},
                                 rng, -bound, bound));
    store.create(base + ".b", Tensor::zeros({spec.out_channels}));
    if (spec.bn) {
        store.create(base + ".bn.g", Tensor::full({spec.out_channels}, 1.0));
        store.create(base + ".bn.b", Tensor::zeros({spec.out_channels}));
    }
}

Tape::Val apply_conv(Forward& fwd, const std::string& base, const ConvSpec& spec,
                     Tape::Val x) {
    Tape::Val y = fwd.tape.conv2d(x, fwd.p(base + ".w"), fwd.p(base + ".b"), spec.stride,
                                  spec.padding);
    if (spec.bn) y = fwd.tape.spatial_bn(y, fwd.p(base + ".bn.g"), fwd.p(base + ".bn.b"));
    return y;
}

}  // namespace

// ------------------------------------------------------------- ANN backbone

void AnnBackbone::create_params(ParameterStore& store, Rng& rng, int in_channels) const {
    int c = in_channels;
    for (size_t i = 0; i < cfg_.low.size(); ++i) {
        create_conv_params(store, rng, prefix_ + ".low." + std::to_string(i), cfg_.low[i], c);
        c = cfg_.low[i].out_channels;
    }
    for (size_t i = 0; i < cfg_.high.size(); ++i) {
        create_conv_params(store, rng, prefix_ + ".high." + std::to_string(i), cfg_.high[i], c);
        c = cfg_.high[i].out_channels;
    }
}

Tape::Val AnnBackbone::forward_low(Forward& fwd, Tape::Val frame) const {
    const Tensor& f = fwd.tape.val(frame);
    if (f.ndim() != 3) throw ShapeError("frame must be CxHxW");
    if (f.shape[1] % 16 != 0 || f.shape[2] % 16 != 0)
        throw ShapeError("frame extent must be divisible by 16, got " + shape_str(f.shape));

    Tape::Val x = frame;
    for (size_t i = 0; i < cfg_.low.size(); ++i) {
        x = apply_conv(fwd, prefix_ + ".low." + std::to_string(i), cfg_.low[i], x);
        x = fwd.tape.relu(x);
    }
    return x;
}

Tape::Val AnnBackbone::forward_high(Forward& fwd, Tape::Val low) const {
    Tape::Val x = low;
    for (size_t i = 0; i < cfg_.high.size(); ++i) {
        x = apply_conv(fwd, prefix_ + ".high." + std::to_string(i), cfg_.high[i], x);
        x = fwd.tape.relu(x);
    }
    return x;
}

std::pair<Tape::Val, Tape::Val> AnnBackbone::forward(Forward& fwd, Tape::Val frame) const {
    Tape::Val low = forward_low(fwd, frame);
    return {low, forward_high(fwd, low)};
}

// ------------------------------------------------------------- SNN backbone

void SnnBackbone::create_params(ParameterStore& store, Rng& rng, int in_channels,
                                double u_th_init) const {
    if (u_th_init <= 0.0) throw ConfigError("spike threshold init must be positive");
    int c = in_channels;
    int layer = 0;
    auto add_stack = [&](const std::vector<ConvSpec>& stack, const std::string& stage) {
        for (size_t i = 0; i < stack.size(); ++i) {
            std::string base = prefix_ + "." + stage + "." + std::to_string(i);
            create_conv_params(store, rng, base, stack[i], c);
            store.create(base + ".u_th", Tensor::full({1}, u_th_init));
            c = stack[i].out_channels;
            ++layer;
        }
    };
    add_stack(cfg_.convl, "convl");
    add_stack(cfg_.convh, "convh");
}

std::vector<std::string> SnnBackbone::threshold_ids() const {
    std::vector<std::string> ids;
    for (size_t i = 0; i < cfg_.convl.size(); ++i)
        ids.push_back(prefix_ + ".convl." + std::to_string(i) + ".u_th");
    for (size_t i = 0; i < cfg_.convh.size(); ++i)
        ids.push_back(prefix_ + ".convh." + std::to_string(i) + ".u_th");
    return ids;
}

SnnBackbone::Trains SnnBackbone::forward(Forward& fwd, const std::vector<Tape::Val>& slices) const {
    if (slices.empty()) throw ConfigError("spiking forward needs at least one step");
    int layers = layer_count();

    Trains trains;
    trains.per_layer.resize(static_cast<size_t>(layers));

    // Membrane potential and previous spikes per layer, zeroed at step 1.
    std::vector<Tape::Val> u(static_cast<size_t>(layers));
    std::vector<Tape::Val> o(static_cast<size_t>(layers));
    bool first = true;

    for (Tape::Val slice : slices) {
        Tape::Val x = slice;
        int layer = 0;
        auto run_stack = [&](const std::vector<ConvSpec>& stack, const std::string& stage) {
            for (size_t i = 0; i < stack.size(); ++i, ++layer) {
                std::string base = prefix_ + "." + stage + "." + std::to_string(i);
                Tape::Val syn = apply_conv(fwd, base, stack[i], x);
                if (first) {
                    // copy: creating leaves may reallocate the tape's node vector
                    std::vector<int> syn_shape = fwd.tape.shape(syn);
                    u[static_cast<size_t>(layer)] = fwd.c(Tensor::zeros(syn_shape));
                    o[static_cast<size_t>(layer)] = fwd.c(Tensor::zeros(syn_shape));
                }
                Tape::Val membrane = fwd.tape.lif_update(u[static_cast<size_t>(layer)],
                                                         o[static_cast<size_t>(layer)], syn,
                                                         alpha_);
                Tape::Val spikes = fwd.tape.spike(membrane, fwd.p(base + ".u_th"));
                u[static_cast<size_t>(layer)] = membrane;
                o[static_cast<size_t>(layer)] = spikes;
                trains.per_layer[static_cast<size_t>(layer)].push_back(spikes);
                x = spikes;
            }
        };
        run_stack(cfg_.convl, "convl");
        trains.low.push_back(x);
        run_stack(cfg_.convh, "convh");
        if (!cfg_.convh.empty()) trains.high.push_back(x);
        first = false;
    }
    return trains;
}

// ----------------------------------------------------------------- LIF step

LifStepResult lif_step(const Tensor& u_prev, const Tensor& o_prev, const Tensor& synaptic,
                       double alpha, double u_th) {
    Tape tape;
    Tape::Val u = tape.lif_update(tape.leaf(u_prev, false), tape.leaf(o_prev, false),
                                  tape.leaf(synaptic, false), alpha);
    Tape::Val o = tape.spike(u, tape.leaf(Tensor::full({1}, u_th), false));
    return {tape.val(u), tape.val(o)};
}

Tape::Val rate_code(Tape& tape, const std::vector<Tape::Val>& train) {
    if (train.empty()) throw ConfigError("rate coding needs a nonempty train");
    return tape.average(train);
}

}  // namespace spikefuse
