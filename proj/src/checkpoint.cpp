#include "spikefuse/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace spikefuse {

namespace {

constexpr uint32_t kMagic = 0x53504b46;  // "SPKF"
constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated checkpoint");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
    uint64_t len = read_pod<uint64_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw ParseError("truncated checkpoint string");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const RunConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write checkpoint " + path);
    write_pod(out, kMagic);
    write_pod(out, kVersion);
    write_string(out, config.to_kv().to_text());
    write_pod<uint64_t>(out, store.size());
    store.for_each([&](const std::string& id, const ParameterStore::Entry& entry) {
        write_string(out, id);
        write_pod<uint8_t>(out, entry.trainable ? 1 : 0);
        write_pod<uint32_t>(out, static_cast<uint32_t>(entry.tensor.shape.size()));
        for (int e : entry.tensor.shape) write_pod<int64_t>(out, e);
        out.write(reinterpret_cast<const char*>(entry.tensor.data.data()),
                  static_cast<std::streamsize>(entry.tensor.data.size() * sizeof(double)));
    });
    if (!out) throw ParseError("write failure on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path);
    if (read_pod<uint32_t>(in) != kMagic) throw ParseError("not a checkpoint file: " + path);
    uint32_t version = read_pod<uint32_t>(in);
    if (version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.config = RunConfig::from_kv(KeyValues::parse_text(read_string(in)));
    uint64_t count = read_pod<uint64_t>(in);
    for (uint64_t i = 0; i < count; ++i) {
        std::string id = read_string(in);
        bool trainable = read_pod<uint8_t>(in) != 0;
        uint32_t ndim = read_pod<uint32_t>(in);
        std::vector<int> shape;
        for (uint32_t d = 0; d < ndim; ++d)
            shape.push_back(static_cast<int>(read_pod<int64_t>(in)));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw ParseError("truncated checkpoint tensor " + id);
        ckpt.store.create(id, std::move(t), trainable);
    }
    return ckpt;
}

}  // namespace spikefuse
