#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nnwm/network.hpp"

namespace nnwm {

class SerializeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class BadMagicError : public SerializeError {
public:
    BadMagicError() : SerializeError("model stream: bad magic (expected NNWM)") {}
};
class BadVersionError : public SerializeError {
public:
    explicit BadVersionError(unsigned got)
        : SerializeError("model stream: unsupported version " + std::to_string(got)) {}
};
class TruncatedStreamError : public SerializeError {
public:
    TruncatedStreamError() : SerializeError("model stream: truncated") {}
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(out, u);
}

struct Reader {
    const std::uint8_t* p;
    std::size_t left;

    std::uint8_t u8() {
        if (left < 1) throw TruncatedStreamError();
        --left;
        return *p++;
    }
    std::uint32_t u32() {
        if (left < 4) throw TruncatedStreamError();
        std::uint32_t v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
        p += 4;
        left -= 4;
        return v;
    }
    float f32() {
        const std::uint32_t u = u32();
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
};

} // namespace detail

/// Model wire format, version 1. Magic "NNWM", version byte, little-endian
/// u32 layer count, then per layer: u8 kind tag, kind-specific u32 dims
/// (dense: in,out; conv2d: in,out,kernel), f32 dropout rate for dropout
/// layers, and the f32 weight then bias arrays in canonical order.
inline std::vector<std::uint8_t> serialize_network(const Network<float>& net) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'N', 'N', 'W', 'M'});
    out.push_back(0x01);
    detail::put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        out.push_back(static_cast<std::uint8_t>(s.kind));
        switch (s.kind) {
            case LayerKind::dense:
                detail::put_u32(out, static_cast<std::uint32_t>(s.in));
                detail::put_u32(out, static_cast<std::uint32_t>(s.out));
                break;
            case LayerKind::conv2d:
                detail::put_u32(out, static_cast<std::uint32_t>(s.in));
                detail::put_u32(out, static_cast<std::uint32_t>(s.out));
                detail::put_u32(out, static_cast<std::uint32_t>(s.kernel));
                break;
            case LayerKind::dropout:
                detail::put_f32(out, s.dropout_rate);
                break;
            default:
                break;
        }
        if (s.has_params()) {
            for (float w : net.weights[l].data) detail::put_f32(out, w);
            for (float b : net.biases[l].data) detail::put_f32(out, b);
        }
    }
    return out;
}

inline Network<float> deserialize_network(const std::uint8_t* data, std::size_t size) {
    if (size < 4 || std::memcmp(data, "NNWM", 4) != 0) throw BadMagicError();
    detail::Reader r{data + 4, size - 4};
    const std::uint8_t version = r.u8();
    if (version != 0x01) throw BadVersionError(version);

    const std::uint32_t layer_count = r.u32();
    std::vector<LayerSpec> specs;
    specs.reserve(layer_count);
    std::vector<std::vector<float>> ws(layer_count), bs(layer_count);

    for (std::uint32_t l = 0; l < layer_count; ++l) {
        const std::uint8_t tag = r.u8();
        if (tag > 5) throw SerializeError("model stream: unknown layer tag " + std::to_string(tag));
        LayerSpec s;
        s.kind = static_cast<LayerKind>(tag);
        switch (s.kind) {
            case LayerKind::dense:
                s.in = r.u32();
                s.out = r.u32();
                s.kernel = 0;
                break;
            case LayerKind::conv2d:
                s.in = r.u32();
                s.out = r.u32();
                s.kernel = r.u32();
                break;
            case LayerKind::dropout:
                s.dropout_rate = r.f32();
                break;
            default:
                break;
        }
        if (s.has_params()) {
            ws[l].resize(s.weight_count());
            for (float& w : ws[l]) w = r.f32();
            bs[l].resize(s.bias_count());
            for (float& b : bs[l]) b = r.f32();
        }
        specs.push_back(s);
    }

    Network<float> net = build_network<float>(specs, 0);
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        if (!specs[l].has_params()) continue;
        net.weights[l].data = std::move(ws[l]);
        net.biases[l].data = std::move(bs[l]);
    }
    return net;
}

inline Network<float> deserialize_network(const std::vector<std::uint8_t>& bytes) {
    return deserialize_network(bytes.data(), bytes.size());
}

inline void save_network(const Network<float>& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw SerializeError("cannot open " + path + " for writing");
    const std::vector<std::uint8_t> bytes = serialize_network(net);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw SerializeError("write failed: " + path);
}

inline Network<float> load_network(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw SerializeError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize_network(bytes);
}

} // namespace nnwm
