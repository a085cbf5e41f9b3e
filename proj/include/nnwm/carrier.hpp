#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnwm/codec.hpp"
#include "nnwm/prng.hpp"
#include "nnwm/tensor.hpp"

namespace nnwm {

enum class CarrierKind { random_walk, white_noise, uniform_noise, one_hot };

inline const char* carrier_kind_name(CarrierKind k) {
    switch (k) {
        case CarrierKind::random_walk: return "random_walk";
        case CarrierKind::white_noise: return "white_noise";
        case CarrierKind::uniform_noise: return "uniform_noise";
        case CarrierKind::one_hot: return "one_hot";
    }
    return "?";
}

inline CarrierKind carrier_kind_from_name(const std::string& s) {
    if (s == "random_walk") return CarrierKind::random_walk;
    if (s == "white_noise") return CarrierKind::white_noise;
    if (s == "uniform_noise") return CarrierKind::uniform_noise;
    if (s == "one_hot") return CarrierKind::one_hot;
    throw CodecError("unknown carrier kind: " + s);
}

/// The n-bit secret plus everything needed to regenerate its carrier images
/// bit-exactly. This is the only watermark artifact ever persisted.
struct WatermarkSpec {
    Bits bits;
    std::uint64_t seed = 0;
    CarrierKind carrier_kind = CarrierKind::random_walk;
    int k = 10;
    std::size_t height = 28, width = 28, channels = 1;

    std::size_t n() const { return bits.size(); }
    std::size_t m() const { return carrier_count(bits.size(), k); }
};

/// The generated carrier images and their watermark-encoding labels.
struct CarrierSet {
    Tensor<float> images; // [m,H,W,C]
    std::vector<int> labels;
    WatermarkSpec spec;

    std::size_t size() const { return images.rows(); }
};

/// Generates the watermark-carrier set: a pure function of the spec.
///
/// random_walk starts at the image center and takes H*W steps, each writing a
/// uniform [0,1] value at the current pixel (all channels) and then moving
/// one pixel in a uniformly chosen 4-neighbourhood direction, clamped at the
/// borders. white_noise draws per-element standard normals clipped to [0,1];
/// uniform_noise draws per-element uniforms; one_hot sets a single randomly
/// chosen element to 1.
inline CarrierSet generate_carrier_set(const WatermarkSpec& spec) {
    if (spec.bits.empty()) throw CodecError("watermark must have at least 1 bit");
    const std::size_t m = spec.m();
    const std::size_t h = spec.height, w = spec.width, c = spec.channels;

    CarrierSet set;
    set.spec = spec;
    set.images = Tensor<float>({m, h, w, c});
    set.labels = bits_to_labels(spec.bits, spec.k);

    SplitMix64 rng = make_stream(spec.seed, RngStream::carrier);
    for (std::size_t i = 0; i < m; ++i) {
        float* img = set.images.row(i);
        switch (spec.carrier_kind) {
            case CarrierKind::random_walk: {
                std::size_t y = h / 2, x = w / 2;
                for (std::size_t step = 0; step < h * w; ++step) {
                    const float v = static_cast<float>(rng.next_double());
                    for (std::size_t ch = 0; ch < c; ++ch) img[(y * w + x) * c + ch] = v;
                    switch (rng.next_index(4)) {
                        case 0: if (y > 0) --y; break;
                        case 1: if (y + 1 < h) ++y; break;
                        case 2: if (x > 0) --x; break;
                        case 3: if (x + 1 < w) ++x; break;
                    }
                }
                break;
            }
            case CarrierKind::white_noise:
                for (std::size_t e = 0; e < h * w * c; ++e) {
                    const double g = rng.next_gaussian();
                    img[e] = static_cast<float>(std::min(1.0, std::max(0.0, g)));
                }
                break;
            case CarrierKind::uniform_noise:
                for (std::size_t e = 0; e < h * w * c; ++e)
                    img[e] = static_cast<float>(rng.next_double());
                break;
            case CarrierKind::one_hot:
                img[rng.next_index(h * w * c)] = 1.0f;
                break;
        }
    }
    return set;
}

} // namespace nnwm
