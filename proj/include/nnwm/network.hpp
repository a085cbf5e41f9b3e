#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nnwm/prng.hpp"
#include "nnwm/tensor.hpp"

namespace nnwm {

class NetworkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LayerKind : std::uint8_t {
    dense = 0,
    conv2d = 1,
    maxpool2x2 = 2,
    relu = 3,
    dropout = 4,
    flatten = 5,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::relu: return "relu";
        case LayerKind::dropout: return "dropout";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

/// One layer of the fixed layer vocabulary. Convolutions are kernel x kernel,
/// stride 1, no padding; kernel is 3 for user-built networks (1x1 layers only
/// arise internally from low-rank expansion). Max pooling is 2x2 stride 2.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in = 0;           // dense: input features; conv2d: input channels
    std::size_t out = 0;          // dense: output features; conv2d: filter count
    std::size_t kernel = 3;       // conv2d only; 1 or 3
    float dropout_rate = 0.0f;    // dropout only; in [0,1)

    static LayerSpec dense_layer(std::size_t in, std::size_t out) {
        return {LayerKind::dense, in, out, 0, 0.0f};
    }
    static LayerSpec conv2d_layer(std::size_t in_channels, std::size_t out_channels,
                                  std::size_t kernel = 3) {
        return {LayerKind::conv2d, in_channels, out_channels, kernel, 0.0f};
    }
    static LayerSpec maxpool_layer() { return {LayerKind::maxpool2x2, 0, 0, 0, 0.0f}; }
    static LayerSpec relu_layer() { return {LayerKind::relu, 0, 0, 0, 0.0f}; }
    static LayerSpec dropout_layer(float rate) { return {LayerKind::dropout, 0, 0, 0, rate}; }
    static LayerSpec flatten_layer() { return {LayerKind::flatten, 0, 0, 0, 0.0f}; }

    bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

    std::size_t weight_count() const {
        if (kind == LayerKind::dense) return in * out;
        if (kind == LayerKind::conv2d) return out * kernel * kernel * in;
        return 0;
    }
    std::size_t bias_count() const { return has_params() ? out : 0; }
};

/// Validates what is checkable without knowing the input's spatial size:
/// feature/channel chaining and kind ordering. Spatial dims are re-checked
/// against the actual batch on every forward pass.
inline void validate_layer_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw NetworkError("network needs at least one layer");

    enum class State { input, flat, spatial };
    State state = State::input;
    std::size_t features = 0; // valid in flat state
    std::size_t channels = 0; // valid in spatial state

    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        const std::string where = "layer " + std::to_string(i) + " (" + layer_kind_name(s.kind) + ")";
        switch (s.kind) {
            case LayerKind::dense:
                if (s.in == 0 || s.out == 0) throw NetworkError(where + ": dims must be positive");
                if (state == State::spatial)
                    throw NetworkError(where + ": dense after spatial output requires flatten");
                if (state == State::flat && features != 0 && features != s.in)
                    throw NetworkError(where + ": expects " + std::to_string(s.in) +
                                       " inputs but previous layer produces " + std::to_string(features));
                state = State::flat;
                features = s.out;
                break;
            case LayerKind::conv2d:
                if (s.in == 0 || s.out == 0) throw NetworkError(where + ": dims must be positive");
                if (s.kernel != 1 && s.kernel != 3)
                    throw NetworkError(where + ": kernel must be 1 or 3");
                if (state == State::flat)
                    throw NetworkError(where + ": conv2d cannot follow a flat layer");
                if (state == State::spatial && channels != s.in)
                    throw NetworkError(where + ": expects " + std::to_string(s.in) +
                                       " channels but previous layer produces " + std::to_string(channels));
                state = State::spatial;
                channels = s.out;
                break;
            case LayerKind::maxpool2x2:
                if (state == State::flat) throw NetworkError(where + ": pooling needs spatial input");
                break;
            case LayerKind::relu:
                break;
            case LayerKind::dropout:
                if (!(s.dropout_rate >= 0.0f && s.dropout_rate < 1.0f))
                    throw NetworkError(where + ": dropout rate must be in [0,1)");
                break;
            case LayerKind::flatten:
                state = State::flat;
                features = 0; // unknown until the input shape is seen
                break;
        }
    }
}

/// Feed-forward network: ordered layers plus per-layer weight/bias tensors.
/// The canonical parameter order (layers in forward order, weights then
/// biases, row-major) exposes all parameters as one logical vector; every
/// parameter-space embedder indexes into that vector.
template <typename Scalar>
struct Network {
    std::vector<LayerSpec> layers;
    std::vector<Tensor<Scalar>> weights; // empty tensor for parameterless layers
    std::vector<Tensor<Scalar>> biases;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const LayerSpec& s : layers) n += s.weight_count() + s.bias_count();
        return n;
    }

    std::size_t weight_param_count() const {
        std::size_t n = 0;
        for (const LayerSpec& s : layers) n += s.weight_count();
        return n;
    }

    /// Canonical flatten.
    std::vector<Scalar> flatten_params() const {
        std::vector<Scalar> v;
        v.reserve(param_count());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            v.insert(v.end(), weights[l].data.begin(), weights[l].data.end());
            v.insert(v.end(), biases[l].data.begin(), biases[l].data.end());
        }
        return v;
    }

    /// Canonical unflatten; inverse of flatten_params.
    void unflatten_params(const std::vector<Scalar>& v) {
        if (v.size() != param_count()) throw NetworkError("parameter vector size mismatch");
        std::size_t pos = 0;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            for (Scalar& w : weights[l].data) w = v[pos++];
            for (Scalar& b : biases[l].data) b = v[pos++];
        }
    }

    /// Maps a canonical index to a mutable parameter reference.
    Scalar& param_at(std::size_t index) {
        std::size_t pos = index;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (pos < weights[l].data.size()) return weights[l].data[pos];
            pos -= weights[l].data.size();
            if (pos < biases[l].data.size()) return biases[l].data[pos];
            pos -= biases[l].data.size();
        }
        throw NetworkError("canonical parameter index out of range");
    }

    const Scalar& param_at(std::size_t index) const {
        return const_cast<Network*>(this)->param_at(index);
    }

    /// Canonical offset of a layer's weight block.
    std::size_t weight_offset(std::size_t layer) const {
        std::size_t off = 0;
        for (std::size_t l = 0; l < layer; ++l)
            off += layers[l].weight_count() + layers[l].bias_count();
        return off;
    }
};

/// Glorot-uniform weights, zero biases, drawn in canonical order from the
/// init stream of `seed`; bit-identical for a fixed (specs, seed).
template <typename Scalar = float>
Network<Scalar> build_network(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    validate_layer_specs(specs);
    Network<Scalar> net;
    net.layers = specs;
    net.weights.resize(specs.size());
    net.biases.resize(specs.size());

    SplitMix64 rng = make_stream(seed, RngStream::init);
    for (std::size_t l = 0; l < specs.size(); ++l) {
        const LayerSpec& s = specs[l];
        if (!s.has_params()) continue;
        std::size_t fan_in, fan_out;
        if (s.kind == LayerKind::dense) {
            fan_in = s.in;
            fan_out = s.out;
            net.weights[l] = Tensor<Scalar>({s.in, s.out});
        } else {
            fan_in = s.in * s.kernel * s.kernel;
            fan_out = s.out * s.kernel * s.kernel;
            net.weights[l] = Tensor<Scalar>({s.out, s.kernel, s.kernel, s.in});
        }
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (Scalar& w : net.weights[l].data)
            w = static_cast<Scalar>(rng.next_uniform(-limit, limit));
        net.biases[l] = Tensor<Scalar>({s.out});
    }
    return net;
}

} // namespace nnwm
