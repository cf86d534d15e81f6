#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/network.hpp"

// Model file layout (little-endian):
//   magic "PRNB", u32 version
//   u32 layer_count, u32 input_rank, u64 input dims
//   per layer: u8 kind, then kind-specific u32 shape fields
//   per conv layer: gate bitmap, (C_out+7)/8 bytes, LSB-first
//   payload: per parameterized layer, f64 weight values, bias values,
//            weight momentum, bias momentum
// Any byte left over or missing relative to the manifest is a corruption error.

namespace prunekit {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'B'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw DataError("model file truncated");
    return v;
}
uint64_t read_u64(std::istream& is) {
    uint64_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw DataError("model file truncated");
    return v;
}

void write_f64s(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_f64s(std::istream& is, std::vector<double>& v) {
    if (!is.read(reinterpret_cast<char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(double))))
        throw DataError("model file truncated: payload shorter than declared shapes");
}

} // namespace

void Network::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open model file for writing: " + path);

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<uint32_t>(layers.size()));
    write_u32(os, static_cast<uint32_t>(input_shape.size()));
    for (size_t d : input_shape) write_u64(os, static_cast<uint64_t>(d));

    for (const Layer& l : layers) {
        const uint8_t kind = static_cast<uint8_t>(l.kind);
        os.write(reinterpret_cast<const char*>(&kind), 1);
        if (l.kind == LayerKind::Conv2d) {
            write_u32(os, static_cast<uint32_t>(l.in_channels));
            write_u32(os, static_cast<uint32_t>(l.out_channels));
            write_u32(os, static_cast<uint32_t>(l.kernel));
            write_u32(os, static_cast<uint32_t>(l.padding));
        } else if (l.kind == LayerKind::Dense) {
            write_u32(os, static_cast<uint32_t>(l.in_features));
            write_u32(os, static_cast<uint32_t>(l.out_features));
        }
    }

    for (const Layer& l : layers) {
        if (l.kind != LayerKind::Conv2d) continue;
        std::vector<uint8_t> bits((l.gate.size() + 7) / 8, 0);
        for (size_t i = 0; i < l.gate.size(); ++i)
            if (l.gate[i] != 0.0) bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
        os.write(reinterpret_cast<const char*>(bits.data()),
                 static_cast<std::streamsize>(bits.size()));
    }

    for (const Layer& l : layers) {
        if (!l.has_params()) continue;
        write_f64s(os, l.weight.value.data);
        write_f64s(os, l.bias.value.data);
        write_f64s(os, l.weight.momentum.data);
        write_f64s(os, l.bias.momentum.data);
    }
    if (!os) throw DataError("write failed for model file: " + path);
}

Network Network::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open model file: " + path);

    char magic[4];
    if (!is.read(magic, 4)) throw DataError("model file truncated: missing magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad model file magic (expected PRNB at offset 0)");
    const uint32_t version = read_u32(is);
    if (version != kVersion)
        throw DataError("unsupported model file version " + std::to_string(version));

    Network net;
    const uint32_t n_layers = read_u32(is);
    const uint32_t rank = read_u32(is);
    if (rank != 3) throw DataError("model file: input shape must have rank 3");
    net.input_shape.resize(rank);
    for (uint32_t i = 0; i < rank; ++i) net.input_shape[i] = static_cast<size_t>(read_u64(is));

    net.layers.resize(n_layers);
    for (Layer& l : net.layers) {
        uint8_t kind;
        if (!is.read(reinterpret_cast<char*>(&kind), 1))
            throw DataError("model file truncated: layer manifest");
        if (kind > static_cast<uint8_t>(LayerKind::Dense))
            throw DataError("model file: unknown layer kind");
        l.kind = static_cast<LayerKind>(kind);
        if (l.kind == LayerKind::Conv2d) {
            l.in_channels = static_cast<int>(read_u32(is));
            l.out_channels = static_cast<int>(read_u32(is));
            l.kernel = static_cast<int>(read_u32(is));
            l.padding = static_cast<int>(read_u32(is));
            if (l.out_channels <= 0 || l.in_channels <= 0 || l.kernel <= 0)
                throw DataError("model file: invalid conv shape");
            l.weight = Parameter(Tensor({static_cast<size_t>(l.out_channels),
                                         static_cast<size_t>(l.in_channels),
                                         static_cast<size_t>(l.kernel),
                                         static_cast<size_t>(l.kernel)}));
            l.bias = Parameter(Tensor({static_cast<size_t>(l.out_channels)}));
            l.gate.assign(static_cast<size_t>(l.out_channels), 1.0);
        } else if (l.kind == LayerKind::Dense) {
            l.in_features = static_cast<int>(read_u32(is));
            l.out_features = static_cast<int>(read_u32(is));
            if (l.in_features <= 0 || l.out_features <= 0)
                throw DataError("model file: invalid dense shape");
            l.weight = Parameter(Tensor({static_cast<size_t>(l.out_features),
                                         static_cast<size_t>(l.in_features)}));
            l.bias = Parameter(Tensor({static_cast<size_t>(l.out_features)}));
        }
    }

    for (Layer& l : net.layers) {
        if (l.kind != LayerKind::Conv2d) continue;
        std::vector<uint8_t> bits((l.gate.size() + 7) / 8);
        if (!is.read(reinterpret_cast<char*>(bits.data()),
                     static_cast<std::streamsize>(bits.size())))
            throw DataError("model file truncated: gate bitmaps");
        for (size_t i = 0; i < l.gate.size(); ++i)
            l.gate[i] = (bits[i / 8] >> (i % 8)) & 1u ? 1.0 : 0.0;
    }

    for (Layer& l : net.layers) {
        if (!l.has_params()) continue;
        read_f64s(is, l.weight.value.data);
        read_f64s(is, l.bias.value.data);
        read_f64s(is, l.weight.momentum.data);
        read_f64s(is, l.bias.momentum.data);
    }

    // declared shapes must consume the file exactly
    is.peek();
    if (!is.eof()) throw DataError("model file: trailing bytes after declared payload");
    net.bump_revision();
    return net;
}

} // namespace prunekit
