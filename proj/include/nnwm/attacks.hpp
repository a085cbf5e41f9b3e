#pragma once

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "nnwm/dataset.hpp"
#include "nnwm/engine.hpp"
#include "nnwm/linalg.hpp"
#include "nnwm/network.hpp"
#include "nnwm/train.hpp"

namespace nnwm {

class AttackError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class AttackNotApplicableError : public AttackError {
public:
    using AttackError::AttackError;
};

enum class AttackKind { distill, prune, round, finetune, expand };

inline const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::distill: return "distill";
        case AttackKind::prune: return "prune";
        case AttackKind::round: return "round";
        case AttackKind::finetune: return "finetune";
        case AttackKind::expand: return "expand";
    }
    return "?";
}

struct AttackConfig {
    AttackKind kind = AttackKind::distill;
    double distill_temperature = 10.0;
    double distill_alpha = 0.5; // soft-loss share
    std::vector<LayerSpec> student_arch;
    double prune_rate = 0.4;
    std::size_t finetune_epochs = 25;
    int round_digits = 2;
    std::vector<std::size_t> expand_ranks; // one per conv layer; empty = full rank
};

namespace detail {

inline std::size_t output_classes(const std::vector<LayerSpec>& specs) {
    for (std::size_t l = specs.size(); l-- > 0;)
        if (specs[l].has_params()) return specs[l].out;
    throw AttackError("architecture has no parametered layers");
}

} // namespace detail

/// Distills the teacher into a freshly initialized student. Per batch, the
/// teacher's soft predictions are taken at the distillation temperature (eval
/// mode); the student minimizes
///   alpha * T^2 * softCE(student at T, teacher targets)
///     + (1 - alpha) * CE(student at T=1, ground-truth labels).
/// The T^2 factor keeps the soft-term gradient scale comparable across
/// temperatures. The teacher is never modified and nothing watermark-related
/// is read.
inline Network<float> distill(const Network<float>& teacher, const Dataset& refining,
                              const AttackConfig& cfg, const TrainConfig& train_cfg) {
    if (refining.size() == 0) throw AttackError("refining set is empty");
    if (!(cfg.distill_alpha >= 0.0 && cfg.distill_alpha <= 1.0))
        throw AttackError("distill alpha must be in [0,1]");
    if (cfg.distill_temperature <= 0.0) throw AttackError("distill temperature must be positive");
    if (detail::output_classes(cfg.student_arch) != detail::output_classes(teacher.layers))
        throw AttackError("student/teacher class count mismatch");

    Network<float> student = build_network<float>(cfg.student_arch, train_cfg.seed);
    const double t = cfg.distill_temperature;

    TrainHooks<float> hooks;
    hooks.hard_weight = 1.0 - cfg.distill_alpha;
    hooks.soft_weight = cfg.distill_alpha * t * t;
    hooks.soft_temperature = t;
    const Network<float>* tp = &teacher;
    hooks.soft_target_provider = [tp, t](const Tensor<float>& batch, const std::vector<std::size_t>&) {
        ForwardConfig fc;
        fc.temperature = t;
        return forward(*tp, batch, fc);
    };
    train_loop(student, refining.images, refining.labels, train_cfg, hooks);
    return student;
}

/// Global magnitude pruning over the weight parameters (biases exempt): the
/// floor(rate * W) smallest magnitudes are zeroed and masked, then the net is
/// fine-tuned on the refining set with the mask re-applied after every step.
inline Network<float> prune_finetune(const Network<float>& net, const Dataset& refining,
                                     const AttackConfig& cfg, const TrainConfig& train_cfg) {
    if (!(cfg.prune_rate > 0.0 && cfg.prune_rate < 1.0))
        throw AttackError("prune rate must be in (0,1)");
    if (refining.size() == 0) throw AttackError("refining set is empty");

    Network<float> out = net;
    const std::size_t total_w = out.weight_param_count();
    const std::size_t z = static_cast<std::size_t>(cfg.prune_rate * static_cast<double>(total_w));

    // (|w|, layer, index) triples; ties resolved by position for determinism
    struct Entry {
        float mag;
        std::uint32_t layer;
        std::uint32_t index;
    };
    std::vector<Entry> entries;
    entries.reserve(total_w);
    for (std::size_t l = 0; l < out.layers.size(); ++l)
        for (std::size_t i = 0; i < out.weights[l].data.size(); ++i)
            entries.push_back({std::abs(out.weights[l].data[i]), static_cast<std::uint32_t>(l),
                               static_cast<std::uint32_t>(i)});
    auto less = [](const Entry& a, const Entry& b) {
        if (a.mag != b.mag) return a.mag < b.mag;
        if (a.layer != b.layer) return a.layer < b.layer;
        return a.index < b.index;
    };
    std::nth_element(entries.begin(), entries.begin() + z, entries.end(), less);

    std::vector<std::vector<std::uint8_t>> mask(out.layers.size());
    for (std::size_t l = 0; l < out.layers.size(); ++l)
        mask[l].assign(out.weights[l].data.size(), 0);
    for (std::size_t e = 0; e < z; ++e) mask[entries[e].layer][entries[e].index] = 1;

    auto apply_mask = [&mask](Network<float>& nw) {
        for (std::size_t l = 0; l < nw.layers.size(); ++l)
            for (std::size_t i = 0; i < mask[l].size(); ++i)
                if (mask[l][i]) nw.weights[l].data[i] = 0.0f;
    };
    apply_mask(out);

    TrainConfig cfg2 = train_cfg;
    cfg2.epochs = cfg.finetune_epochs;
    cfg2.batch_size = std::min(cfg2.batch_size, refining.size());
    TrainHooks<float> hooks;
    hooks.post_step = apply_mask;
    train_loop(out, refining.images, refining.labels, cfg2, hooks);
    apply_mask(out);
    return out;
}

/// Rounds every parameter half-to-even to `digits` decimal places, re-stored
/// in single precision. Idempotent.
inline Network<float> round_params(const Network<float>& net, int digits) {
    if (digits < 1 || digits > 6) throw AttackError("round digits must be in 1..6");
    const double scale = std::pow(10.0, digits);
    Network<float> out = net;
    const int saved = std::fegetround();
    std::fesetround(FE_TONEAREST); // nearbyint ties-to-even
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        for (Tensor<float>* t : {&out.weights[l], &out.biases[l]})
            for (float& w : t->data)
                w = static_cast<float>(std::nearbyint(static_cast<double>(w) * scale) / scale);
    }
    std::fesetround(saved);
    return out;
}

/// Continues training on the refining set with the plain classification loss.
inline Network<float> fine_tune(const Network<float>& net, const Dataset& refining,
                                std::size_t epochs, const TrainConfig& train_cfg) {
    if (refining.size() == 0) throw AttackError("refining set is empty");
    Network<float> out = net;
    TrainConfig cfg = train_cfg;
    cfg.epochs = epochs;
    cfg.batch_size = std::min(cfg.batch_size, refining.size());
    train_loop(out, refining.images, refining.labels, cfg);
    return out;
}

/// Replaces each convolutional layer by two stacked layers obtained from a
/// rank-r truncated SVD of its filter matrix (filters x kernel*kernel*chan):
/// the right factor becomes r filters of the original geometry, the left
/// factor a 1x1 convolution restoring the original channel count. Full rank
/// reproduces the layer exactly up to float rounding. Dense layers and all
/// other parameters are untouched.
inline Network<float> lowrank_expand(const Network<float>& net,
                                     const std::vector<std::size_t>& ranks) {
    std::size_t conv_count = 0;
    for (const LayerSpec& s : net.layers)
        if (s.kind == LayerKind::conv2d) ++conv_count;
    if (conv_count == 0)
        throw AttackNotApplicableError("low-rank expansion needs convolutional layers");
    if (!ranks.empty() && ranks.size() != conv_count)
        throw AttackError("need one rank per conv layer (" + std::to_string(conv_count) + ")");

    Network<float> out;
    std::size_t conv_seen = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        if (s.kind != LayerKind::conv2d) {
            out.layers.push_back(s);
            out.weights.push_back(net.weights[l]);
            out.biases.push_back(net.biases[l]);
            continue;
        }
        const std::size_t f = s.out, d = s.kernel * s.kernel * s.in;
        const std::size_t full = std::min(f, d);
        const std::size_t r = ranks.empty() ? full : ranks[conv_seen];
        ++conv_seen;
        if (r == 0 || r > full)
            throw AttackError("rank " + std::to_string(r) + " outside 1.." + std::to_string(full) +
                              " for a " + std::to_string(f) + "x" + std::to_string(d) + " layer");

        std::vector<double> mat(net.weights[l].data.begin(), net.weights[l].data.end());
        SvdResult sv = svd(mat, f, d);

        // right factor: r filters with the original kernel geometry
        LayerSpec right = LayerSpec::conv2d_layer(s.in, r, s.kernel);
        Tensor<float> wr({r, s.kernel, s.kernel, s.in});
        for (std::size_t j = 0; j < r; ++j)
            for (std::size_t i = 0; i < d; ++i)
                wr.data[j * d + i] = static_cast<float>(sv.v[i * sv.r + j]);
        out.layers.push_back(right);
        out.weights.push_back(std::move(wr));
        out.biases.push_back(Tensor<float>({r}));

        // left factor: 1x1 conv carrying U * Sigma and the original bias
        LayerSpec left = LayerSpec::conv2d_layer(r, f, 1);
        Tensor<float> wl({f, 1, 1, r});
        for (std::size_t i = 0; i < f; ++i)
            for (std::size_t j = 0; j < r; ++j)
                wl.data[i * r + j] = static_cast<float>(sv.u[i * sv.r + j] * sv.s[j]);
        out.layers.push_back(left);
        out.weights.push_back(std::move(wl));
        out.biases.push_back(net.biases[l]);
    }
    return out;
}

/// Multiplies per forward sample (dense and conv layers), for reporting the
/// expansion's cost ratio.
inline std::size_t network_multiply_count(const Network<float>& net,
                                          std::vector<std::size_t> input_shape) {
    std::size_t total = 0;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        std::vector<std::size_t> out_shape = detail::layer_output_shape(s, input_shape, l);
        if (s.kind == LayerKind::dense) total += s.in * s.out;
        if (s.kind == LayerKind::conv2d)
            total += s.out * s.kernel * s.kernel * s.in * out_shape[0] * out_shape[1];
        input_shape = std::move(out_shape);
    }
    return total;
}

} // namespace nnwm
