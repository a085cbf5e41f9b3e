#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nnwm/engine.hpp"
#include "nnwm/network.hpp"
#include "nnwm/optimizer.hpp"
#include "nnwm/prng.hpp"

namespace nnwm {

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 128;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    bool shuffle_each_epoch = true;

    void validate(std::size_t dataset_size) const {
        optimizer.validate();
        if (batch_size == 0) throw EngineError("batch size must be positive");
        if (batch_size > dataset_size) throw EngineError("batch size exceeds dataset size");
    }
};

struct EpochStats {
    double loss = 0.0;           // per-sample composite loss, averaged over the epoch
    double train_accuracy = 0.0; // streaming accuracy over the epoch's training batches
};

/// Optional extensions of the per-batch objective. The soft-target provider
/// receives the gathered batch and the dataset indices it came from; the row
/// weight provider returns one soft-loss weight per batch row.
template <typename Scalar>
struct TrainHooks {
    std::vector<Regularizer<Scalar>> regularizers;
    std::function<Tensor<Scalar>(const Tensor<Scalar>&, const std::vector<std::size_t>&)>
        soft_target_provider;
    std::function<std::vector<double>(const std::vector<std::size_t>&)> soft_row_weight_provider;
    std::function<void(Network<Scalar>&)> post_step; // runs after every optimizer step
    double hard_weight = 1.0;
    double soft_weight = 1.0;
    double soft_temperature = 1.0;
    bool use_dropout = true;
};

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& images, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> shape = images.shape;
    shape[0] = idx.size();
    Tensor<Scalar> out(shape);
    const std::size_t rn = images.row_numel();
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(images.row(idx[i]), images.row(idx[i]) + rn, out.row(i));
    return out;
}

/// Minimizes the composite objective with mini-batch gradient descent.
/// Single-threaded and bit-reproducible for a fixed seed: shuffling and
/// dropout draw from dedicated streams, batches run in order.
template <typename Scalar>
std::vector<EpochStats> train_loop(Network<Scalar>& net, const Tensor<Scalar>& images,
                                   const std::vector<int>& labels, const TrainConfig& cfg,
                                   const TrainHooks<Scalar>& hooks = {}) {
    const std::size_t n = images.rows();
    if (n == 0) throw EngineError("training dataset is empty");
    if (labels.size() != n) throw EngineError("image/label count mismatch");
    cfg.validate(n);

    SplitMix64 shuffle_rng = make_stream(cfg.seed, RngStream::shuffle);
    SplitMix64 dropout_rng = make_stream(cfg.seed, RngStream::dropout);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    OptimizerState<Scalar> state;
    std::vector<EpochStats> history;
    history.reserve(cfg.epochs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.shuffle_each_epoch) shuffle_indices(order, shuffle_rng);
        const double lr = cfg.optimizer.effective_lr(epoch);

        double loss_sum = 0.0;
        std::size_t correct = 0;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t bn = std::min(cfg.batch_size, n - start);
            std::vector<std::size_t> idx(order.begin() + start, order.begin() + start + bn);
            Tensor<Scalar> batch = gather_rows(images, idx);
            std::vector<int> batch_labels(bn);
            for (std::size_t i = 0; i < bn; ++i) batch_labels[i] = labels[idx[i]];

            ObjectiveOptions<Scalar> opt;
            opt.hard_labels = &batch_labels;
            opt.hard_weight = hooks.hard_weight;
            opt.train_mode = hooks.use_dropout;
            opt.dropout_rng = &dropout_rng;
            opt.regularizers = hooks.regularizers.empty() ? nullptr : &hooks.regularizers;

            Tensor<Scalar> soft;
            std::vector<double> row_weights;
            if (hooks.soft_target_provider) {
                soft = hooks.soft_target_provider(batch, idx);
                opt.soft_targets = &soft;
                opt.soft_temperature = hooks.soft_temperature;
                opt.soft_weight = hooks.soft_weight;
                if (hooks.soft_row_weight_provider) {
                    row_weights = hooks.soft_row_weight_provider(idx);
                    opt.soft_row_weights = &row_weights;
                }
            }

            ObjectiveResult<Scalar> res;
            try {
                res = objective_grads(net, batch, opt);
            } catch (const std::exception& e) {
                throw EngineError("epoch " + std::to_string(epoch) + " batch " +
                                  std::to_string(start / cfg.batch_size) + ": " + e.what());
            }
            loss_sum += res.loss * static_cast<double>(bn);
            correct += res.hard_correct;

            optimizer_step(state, net, res.grads, cfg.optimizer, lr);
            if (hooks.post_step) hooks.post_step(net);
        }

        history.push_back({loss_sum / static_cast<double>(n),
                           static_cast<double>(correct) / static_cast<double>(n)});
    }
    return history;
}

/// Fraction of rows whose argmax prediction (T=1, eval mode) matches the
/// label. Ties break toward the lowest class index.
template <typename Scalar>
double evaluate_accuracy(const Network<Scalar>& net, const Tensor<Scalar>& images,
                         const std::vector<int>& labels, std::size_t batch_size = 256) {
    const std::size_t n = images.rows();
    if (n == 0) throw EngineError("cannot evaluate on an empty dataset");
    if (labels.size() != n) throw EngineError("image/label count mismatch");

    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t bn = std::min(batch_size, n - start);
        idx.resize(bn);
        for (std::size_t i = 0; i < bn; ++i) idx[i] = start + i;
        Tensor<Scalar> batch = gather_rows(images, idx);
        Tensor<Scalar> probs = forward(net, batch, ForwardConfig{});
        const std::size_t k = probs.row_numel();
        for (std::size_t r = 0; r < bn; ++r) {
            const int label = labels[start + r];
            if (label < 0 || static_cast<std::size_t>(label) >= k)
                throw EngineError("label out of range");
            const Scalar* pr = probs.row(r);
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (pr[j] > pr[arg]) arg = j;
            if (arg == static_cast<std::size_t>(label)) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

/// Per-row argmax labels at T=1, eval mode.
template <typename Scalar>
std::vector<int> predict_labels(const Network<Scalar>& net, const Tensor<Scalar>& images,
                                std::size_t batch_size = 256) {
    const std::size_t n = images.rows();
    std::vector<int> out;
    out.reserve(n);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t bn = std::min(batch_size, n - start);
        idx.resize(bn);
        for (std::size_t i = 0; i < bn; ++i) idx[i] = start + i;
        Tensor<Scalar> probs = forward(net, gather_rows(images, idx), ForwardConfig{});
        const std::size_t k = probs.row_numel();
        for (std::size_t r = 0; r < bn; ++r) {
            const Scalar* pr = probs.row(r);
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (pr[j] > pr[arg]) arg = j;
            out.push_back(static_cast<int>(arg));
        }
    }
    return out;
}

} // namespace nnwm
