#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nnwm/carrier.hpp"
#include "nnwm/codec.hpp"
#include "nnwm/dataset.hpp"
#include "nnwm/engine.hpp"
#include "nnwm/network.hpp"
#include "nnwm/train.hpp"

namespace nnwm {

class WatermarkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The ingrainer failed to memorize the carrier set within the epoch budget.
/// Exact memorization is a hard requirement, so this is an error rather than
/// a silent degradation; callers may retry with more epochs.
class IngrainerConvergenceError : public WatermarkError {
public:
    explicit IngrainerConvergenceError(double acc)
        : WatermarkError("ingrainer did not reach carrier accuracy 1.0 (got " +
                         std::to_string(acc) + "); increase epochs") {}
};

enum class EmbedMethod { lsb, sgn, cor, sta, cap, ing };

inline const char* embed_method_name(EmbedMethod m) {
    switch (m) {
        case EmbedMethod::lsb: return "W:LSB";
        case EmbedMethod::sgn: return "W:SGN";
        case EmbedMethod::cor: return "W:COR";
        case EmbedMethod::sta: return "W:STA";
        case EmbedMethod::cap: return "P:CAP";
        case EmbedMethod::ing: return "P:ING";
    }
    return "?";
}

struct EmbedConfig {
    EmbedMethod method = EmbedMethod::cap;
    double lambda_s = 1.0;              // sgn penalty weight
    double lambda_c = 1.0;              // cor penalty weight
    std::uint64_t sta_key_seed = 0;     // sta secret key
    std::size_t sta_layer = 0;          // layer hosting the sta watermark
    double ingrain_lambda = 2.0;        // ing coefficient
    double ingrain_temperature = 10.0;  // ing soft temperature
    int lsb_bits_per_param = 1;
};

/// A watermarked network plus everything needed to extract the watermark.
/// The secret key (sta) and the bits themselves live in the spec/config,
/// never in the network.
struct EmbeddedModel {
    Network<float> network;
    WatermarkSpec spec;
    EmbedConfig config;
    std::optional<Network<float>> ingrainer; // method == ing only
};

// ---------------------------------------------------------------------------
// W:LSB — payload in the float32 mantissa
// ---------------------------------------------------------------------------

/// Writes bit j into mantissa bit (j mod bits_per_param) of canonical
/// parameter j / bits_per_param. Each parameter moves by a relative
/// magnitude below 2^-22 for the default single-bit payload.
inline Network<float> embed_lsb(const Network<float>& net, const Bits& bits, int bits_per_param = 1) {
    if (bits_per_param < 1 || bits_per_param > 23)
        throw WatermarkError("bits_per_param must be in [1,23]");
    const std::size_t capacity =
        static_cast<std::size_t>(bits_per_param) * net.param_count();
    if (bits.size() > capacity)
        throw WatermarkError("watermark of " + std::to_string(bits.size()) +
                             " bits exceeds capacity " + std::to_string(capacity));

    Network<float> out = net;
    std::vector<float> params = out.flatten_params();
    for (std::size_t j = 0; j < bits.size(); ++j) {
        const std::size_t pi = j / static_cast<std::size_t>(bits_per_param);
        const unsigned pos = static_cast<unsigned>(j % static_cast<std::size_t>(bits_per_param));
        float& w = params[pi];
        if (!std::isfinite(w)) throw WatermarkError("non-finite parameter at canonical index " +
                                                    std::to_string(pi));
        std::uint32_t u;
        std::memcpy(&u, &w, 4);
        u = (u & ~(1u << pos)) | (static_cast<std::uint32_t>(bits[j] & 1) << pos);
        std::memcpy(&w, &u, 4);
    }
    out.unflatten_params(params);
    return out;
}

inline Bits extract_lsb(const Network<float>& net, std::size_t n, int bits_per_param = 1) {
    if (bits_per_param < 1 || bits_per_param > 23)
        throw WatermarkError("bits_per_param must be in [1,23]");
    if (n > static_cast<std::size_t>(bits_per_param) * net.param_count())
        throw WatermarkError("requested bits exceed capacity");
    const std::vector<float> params = net.flatten_params();
    Bits bits(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t pi = j / static_cast<std::size_t>(bits_per_param);
        const unsigned pos = static_cast<unsigned>(j % static_cast<std::size_t>(bits_per_param));
        std::uint32_t u;
        std::memcpy(&u, &params[pi], 4);
        bits[j] = static_cast<std::uint8_t>((u >> pos) & 1);
    }
    return bits;
}

// ---------------------------------------------------------------------------
// Parameter-space regularizers (sgn / cor / sta): value + exact gradient
// ---------------------------------------------------------------------------

struct PenaltyResult {
    double value = 0.0;
    std::vector<double> grad;
};

/// Sign penalty: (lambda/n) * sum |max(0, -w_i s_i)| with s_i in {-1,+1}.
/// Zero exactly when every covered parameter matches its target sign (or is
/// zero), strictly positive otherwise.
inline PenaltyResult sgn_penalty(const std::vector<double>& w, const std::vector<int>& s_enc,
                                 double lambda) {
    const std::size_t n = s_enc.size();
    if (w.size() < n) throw WatermarkError("sign penalty: watermark longer than parameter slice");
    PenaltyResult r;
    r.grad.assign(n, 0.0);
    const double scale = lambda / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double v = -w[i] * static_cast<double>(s_enc[i]);
        if (v > 0.0) {
            r.value += scale * v;
            r.grad[i] = -scale * static_cast<double>(s_enc[i]);
        }
    }
    return r;
}

/// Correlation penalty: -lambda * pearson(w, s). Signed, so minimizing it
/// always drives the correlation toward +1, which is what the threshold
/// decoder (bit = [w > mean]) inverts.
inline PenaltyResult cor_penalty(const std::vector<double>& w, const std::vector<int>& s_enc,
                                 double lambda) {
    const std::size_t n = s_enc.size();
    if (w.size() < n) throw WatermarkError("correlation penalty: watermark longer than slice");
    double wm = 0.0, sm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        wm += w[i];
        sm += static_cast<double>(s_enc[i]);
    }
    wm /= static_cast<double>(n);
    sm /= static_cast<double>(n);
    double a2 = 0.0, b2 = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = w[i] - wm, b = static_cast<double>(s_enc[i]) - sm;
        a2 += a * a;
        b2 += b * b;
        ab += a * b;
    }
    if (a2 <= 0.0 || b2 <= 0.0)
        throw WatermarkError("correlation penalty undefined for a constant sequence");
    const double denom = std::sqrt(a2 * b2);

    PenaltyResult r;
    r.value = -lambda * ab / denom;
    r.grad.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = w[i] - wm, b = static_cast<double>(s_enc[i]) - sm;
        const double dcorr = (b - (ab / a2) * a) / denom;
        r.grad[i] = -lambda * dcorr;
    }
    return r;
}

/// Secret key for W:STA: n x m standard normal entries, regenerable from the
/// seed alone.
inline std::shared_ptr<std::vector<float>> make_sta_key(std::uint64_t key_seed, std::size_t n,
                                                        std::size_t m) {
    auto key = std::make_shared<std::vector<float>>(n * m);
    SplitMix64 rng = make_stream(key_seed, RngStream::sta_key);
    for (float& x : *key) x = static_cast<float>(rng.next_gaussian());
    return key;
}

/// Statistics penalty: binary cross entropy of sigmoid(X_j . w) against the
/// watermark bits, summed over bits.
inline PenaltyResult sta_penalty(const std::vector<double>& w_slice, const Bits& bits,
                                 const std::vector<float>& key) {
    const std::size_t n = bits.size(), m = w_slice.size();
    if (key.size() != n * m) throw WatermarkError("sta key size does not match n x m");
    PenaltyResult r;
    r.grad.assign(m, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const float* xj = key.data() + j * m;
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += static_cast<double>(xj[i]) * w_slice[i];
        const double y = 1.0 / (1.0 + std::exp(-dot));
        const double yc = std::min(1.0 - 1e-12, std::max(1e-12, y));
        const double s = static_cast<double>(bits[j]);
        r.value -= s * std::log(yc) + (1.0 - s) * std::log(1.0 - yc);
        const double dy = y - s; // d(bce)/d(dot)
        for (std::size_t i = 0; i < m; ++i) r.grad[i] += dy * static_cast<double>(xj[i]);
    }
    return r;
}

inline std::vector<int> sign_encode(const Bits& bits) {
    std::vector<int> s(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) s[i] = bits[i] ? 1 : -1;
    return s;
}

namespace detail {

template <typename Scalar>
std::vector<double> canonical_prefix(const Network<Scalar>& net, std::size_t n) {
    if (n > net.param_count())
        throw WatermarkError("watermark of " + std::to_string(n) +
                             " bits exceeds parameter count " + std::to_string(net.param_count()));
    const std::vector<Scalar> flat = net.flatten_params();
    return std::vector<double>(flat.begin(), flat.begin() + n);
}

template <typename Scalar>
std::vector<double> layer_weight_slice(const Network<Scalar>& net, std::size_t layer) {
    if (layer >= net.layers.size() || !net.layers[layer].has_params())
        throw WatermarkError("sta host layer must be a parametered layer");
    const Tensor<Scalar>& w = net.weights[layer];
    return std::vector<double>(w.data.begin(), w.data.end());
}

} // namespace detail

/// Builds the regularizer for a parameter-space method, closing over the
/// encoded watermark. Covers the first n canonical parameters (sgn, cor) or
/// the designated layer's weights (sta).
template <typename Scalar>
Regularizer<Scalar> make_wm_regularizer(const Network<Scalar>& net, const EmbedConfig& cfg,
                                        const Bits& bits) {
    switch (cfg.method) {
        case EmbedMethod::sgn: {
            auto s_enc = std::make_shared<std::vector<int>>(sign_encode(bits));
            const double lambda = cfg.lambda_s;
            detail::canonical_prefix(net, bits.size()); // capacity check up front
            return [s_enc, lambda](const Network<Scalar>& nw) {
                PenaltyResult p = sgn_penalty(detail::canonical_prefix(nw, s_enc->size()), *s_enc,
                                              lambda);
                RegContribution<Scalar> c;
                c.value = p.value;
                c.offset = 0;
                c.grad.assign(p.grad.begin(), p.grad.end());
                return c;
            };
        }
        case EmbedMethod::cor: {
            auto s_enc = std::make_shared<std::vector<int>>(sign_encode(bits));
            const double lambda = cfg.lambda_c;
            detail::canonical_prefix(net, bits.size());
            return [s_enc, lambda](const Network<Scalar>& nw) {
                PenaltyResult p = cor_penalty(detail::canonical_prefix(nw, s_enc->size()), *s_enc,
                                              lambda);
                RegContribution<Scalar> c;
                c.value = p.value;
                c.offset = 0;
                c.grad.assign(p.grad.begin(), p.grad.end());
                return c;
            };
        }
        case EmbedMethod::sta: {
            const std::size_t m = detail::layer_weight_slice(net, cfg.sta_layer).size();
            auto key = make_sta_key(cfg.sta_key_seed, bits.size(), m);
            auto bits_copy = std::make_shared<Bits>(bits);
            const std::size_t layer = cfg.sta_layer;
            const std::size_t offset = net.weight_offset(layer);
            return [key, bits_copy, layer, offset](const Network<Scalar>& nw) {
                PenaltyResult p =
                    sta_penalty(detail::layer_weight_slice(nw, layer), *bits_copy, *key);
                RegContribution<Scalar> c;
                c.value = p.value;
                c.offset = offset;
                c.grad.assign(p.grad.begin(), p.grad.end());
                return c;
            };
        }
        default:
            throw WatermarkError("no regularizer for this embedding method");
    }
}

/// Reads the watermark back from the parameters. Always returns n bits; the
/// caller scores them against the truth.
template <typename Scalar>
Bits extract_param_wm(EmbedMethod method, const Network<Scalar>& net, std::size_t n,
                      const EmbedConfig& cfg) {
    Bits bits(n);
    switch (method) {
        case EmbedMethod::sgn: {
            const std::vector<double> w = detail::canonical_prefix(net, n);
            for (std::size_t i = 0; i < n; ++i) bits[i] = w[i] > 0.0 ? 1 : 0;
            return bits;
        }
        case EmbedMethod::cor: {
            const std::vector<double> w = detail::canonical_prefix(net, n);
            double mean = 0.0;
            for (double v : w) mean += v;
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) bits[i] = w[i] > mean ? 1 : 0;
            return bits;
        }
        case EmbedMethod::sta: {
            const std::vector<double> w = detail::layer_weight_slice(net, cfg.sta_layer);
            auto key = make_sta_key(cfg.sta_key_seed, n, w.size());
            for (std::size_t j = 0; j < n; ++j) {
                const float* xj = key->data() + j * w.size();
                double dot = 0.0;
                for (std::size_t i = 0; i < w.size(); ++i)
                    dot += static_cast<double>(xj[i]) * w[i];
                bits[j] = dot > 0.0 ? 1 : 0;
            }
            return bits;
        }
        default:
            throw WatermarkError("not a parameter-space method");
    }
}

/// Trains with the classification loss plus the method's watermark penalty.
inline EmbeddedModel train_param_embedded(Network<float> net, const Dataset& dataset,
                                          const TrainConfig& train_cfg, const EmbedConfig& embed_cfg,
                                          const Bits& bits) {
    if (embed_cfg.method != EmbedMethod::sgn && embed_cfg.method != EmbedMethod::cor &&
        embed_cfg.method != EmbedMethod::sta)
        throw WatermarkError("train_param_embedded expects sgn, cor or sta");
    dataset.check();

    TrainHooks<float> hooks;
    hooks.regularizers.push_back(make_wm_regularizer(net, embed_cfg, bits));
    train_loop(net, dataset.images, dataset.labels, train_cfg, hooks);

    EmbeddedModel model;
    model.network = std::move(net);
    model.spec.bits = bits;
    model.spec.k = dataset.num_classes;
    model.config = embed_cfg;
    return model;
}

// ---------------------------------------------------------------------------
// Prediction-space methods: P:CAP and P:ING
// ---------------------------------------------------------------------------

/// Training data poisoned with the carrier set: one up-front shuffle of the
/// union, shared by the capacity-abuse and ingrain trainers so their batch
/// sequences coincide.
struct PoisonedUnion {
    Tensor<float> images;
    std::vector<int> labels;
    std::vector<std::uint8_t> is_carrier;
};

inline PoisonedUnion make_poisoned_union(const Dataset& dataset, const CarrierSet& carrier,
                                         std::uint64_t seed) {
    const std::size_t rn = dataset.images.row_numel();
    if (carrier.size() > 0 && carrier.images.row_numel() != rn)
        throw WatermarkError("carrier image size does not match dataset rows");
    const std::size_t n = dataset.size(), m = carrier.size();

    std::vector<std::size_t> perm(n + m);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    SplitMix64 rng = make_stream(seed, RngStream::shuffle);
    shuffle_indices(perm, rng);

    PoisonedUnion u;
    std::vector<std::size_t> shape = dataset.images.shape;
    shape[0] = n + m;
    u.images = Tensor<float>(shape);
    u.labels.resize(n + m);
    u.is_carrier.resize(n + m);
    for (std::size_t i = 0; i < n + m; ++i) {
        const std::size_t src = perm[i];
        const float* row = src < n ? dataset.images.row(src) : carrier.images.row(src - n);
        std::copy(row, row + rn, u.images.row(i));
        u.labels[i] = src < n ? dataset.labels[src] : carrier.labels[src - n];
        u.is_carrier[i] = src < n ? 0 : 1;
    }
    return u;
}

/// P:CAP: plain training on the shuffled union of D and the carrier set.
inline EmbeddedModel train_pcap(const Dataset& dataset, const CarrierSet& carrier,
                                const std::vector<LayerSpec>& arch, const TrainConfig& train_cfg) {
    dataset.check();
    PoisonedUnion u = make_poisoned_union(dataset, carrier, train_cfg.seed);

    Network<float> net = build_network<float>(arch, train_cfg.seed);
    TrainConfig cfg = train_cfg;
    cfg.shuffle_each_epoch = false; // the union is shuffled once up front
    train_loop(net, u.images, u.labels, cfg);

    EmbeddedModel model;
    model.network = std::move(net);
    model.spec = carrier.spec;
    model.config.method = EmbedMethod::cap;
    return model;
}

/// Trains the ingrainer: same architecture as the classifier, overfitted on
/// the carrier set until it memorizes every label (dropout disabled).
inline Network<float> train_ingrainer(const CarrierSet& carrier,
                                      const std::vector<LayerSpec>& arch,
                                      const TrainConfig& train_cfg) {
    if (carrier.size() == 0) throw WatermarkError("carrier set is empty");
    Network<float> g = build_network<float>(arch, train_cfg.seed);
    TrainConfig cfg = train_cfg;
    cfg.batch_size = std::min(cfg.batch_size, carrier.size());
    TrainHooks<float> hooks;
    hooks.use_dropout = false;
    train_loop(g, carrier.images, carrier.labels, cfg, hooks);
    const double acc = evaluate_accuracy(g, carrier.images, carrier.labels);
    if (acc < 1.0) throw IngrainerConvergenceError(acc);
    return g;
}

/// P:ING: trains the classifier on the shuffled union; every mini-batch is
/// split into a training rows and b carrier rows, the training rows carry the
/// classification loss plus lambda times the soft cross entropy between the
/// classifier at temperature T and the frozen ingrainer (evaluated at T=1,
/// eval mode), the carrier rows carry the classification loss alone, and the
/// update applies the weighted average (a*g_D + b*g_DS)/(a+b) — computed here
/// as one mean over per-row gradients, which is the same vector. With
/// lambda=0 the ingrainer is never consulted and the procedure is P:CAP.
inline EmbeddedModel train_ingrained_classifier(const Dataset& dataset, const CarrierSet& carrier,
                                                const Network<float>& ingrainer,
                                                const std::vector<LayerSpec>& arch,
                                                const TrainConfig& train_cfg, double lambda,
                                                double temperature) {
    if (lambda < 0.0) throw WatermarkError("ingrain coefficient must be >= 0");
    if (temperature <= 0.0) throw WatermarkError("ingrain temperature must be positive");
    dataset.check();
    PoisonedUnion u = make_poisoned_union(dataset, carrier, train_cfg.seed);

    Network<float> net = build_network<float>(arch, train_cfg.seed);
    TrainConfig cfg = train_cfg;
    cfg.shuffle_each_epoch = false;

    TrainHooks<float> hooks;
    if (lambda > 0.0) {
        const Network<float>* g = &ingrainer;
        hooks.soft_target_provider = [g](const Tensor<float>& batch,
                                         const std::vector<std::size_t>&) {
            return forward(*g, batch, ForwardConfig{}); // T=1, eval mode
        };
        const std::vector<std::uint8_t>* mask = &u.is_carrier;
        hooks.soft_row_weight_provider = [mask, lambda](const std::vector<std::size_t>& idx) {
            std::vector<double> w(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) w[i] = (*mask)[idx[i]] ? 0.0 : lambda;
            return w;
        };
        hooks.soft_weight = lambda;
        hooks.soft_temperature = temperature;
    }
    train_loop(net, u.images, u.labels, cfg, hooks);

    EmbeddedModel model;
    model.network = std::move(net);
    model.spec = carrier.spec;
    model.config.method = EmbedMethod::ing;
    model.config.ingrain_lambda = lambda;
    model.config.ingrain_temperature = temperature;
    model.ingrainer = ingrainer;
    return model;
}

struct PredictionExtract {
    std::vector<int> labels;
    double raw_label_accuracy = 0.0;
    Bits bits;
};

/// Queries the network with the carrier images and decodes the watermark from
/// the predicted labels. Predictions outside the 2^b label alphabet (possible
/// when k is not a power of two) contribute their low b bits.
inline PredictionExtract extract_prediction_wm(const Network<float>& net,
                                               const CarrierSet& carrier) {
    if (carrier.size() == 0) throw WatermarkError("carrier set is empty");
    PredictionExtract out;
    out.labels = predict_labels(net, carrier.images);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < out.labels.size(); ++i)
        if (out.labels[i] == carrier.labels[i]) ++correct;
    out.raw_label_accuracy = static_cast<double>(correct) / static_cast<double>(out.labels.size());
    const int mask = (1 << bits_per_label(carrier.spec.k)) - 1;
    std::vector<int> masked(out.labels.size());
    for (std::size_t i = 0; i < out.labels.size(); ++i) masked[i] = out.labels[i] & mask;
    out.bits = labels_to_bits(masked, carrier.spec.k, carrier.spec.n());
    return out;
}

} // namespace nnwm
