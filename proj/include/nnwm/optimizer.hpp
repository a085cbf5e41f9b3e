#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nnwm/engine.hpp"
#include "nnwm/network.hpp"

namespace nnwm {

enum class OptimizerKind { sgd, momentum, adadelta };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double learning_rate = 0.1;
    double momentum = 0.0;           // momentum kind
    double rho = 0.95;               // adadelta
    double epsilon = 1e-8;           // adadelta
    double lr_decay = 1.0;           // multiplicative, every decay_interval_epochs
    std::size_t decay_interval_epochs = 0; // 0 = no decay

    void validate() const {
        if (!(learning_rate > 0.0)) throw EngineError("learning rate must be positive");
        if (kind == OptimizerKind::momentum && !(momentum >= 0.0 && momentum < 1.0))
            throw EngineError("momentum must be in [0,1)");
        if (kind == OptimizerKind::adadelta) {
            if (!(rho > 0.0 && rho < 1.0)) throw EngineError("adadelta rho must be in (0,1)");
            if (!(epsilon > 0.0)) throw EngineError("adadelta epsilon must be positive");
        }
    }

    /// Learning rate in effect for a given 0-based epoch.
    double effective_lr(std::size_t epoch) const {
        if (decay_interval_epochs == 0 || lr_decay == 1.0) return learning_rate;
        return learning_rate * std::pow(lr_decay, static_cast<double>(epoch / decay_interval_epochs));
    }
};

/// Fresh state is all-zero accumulators. slot1 holds the momentum velocity or
/// adadelta's E[g^2]; slot2 holds adadelta's E[dx^2].
template <typename Scalar>
struct OptimizerState {
    ParamGrads<Scalar> slot1;
    ParamGrads<Scalar> slot2;
    bool initialized = false;

    void ensure(const Network<Scalar>& net) {
        if (initialized) return;
        slot1 = ParamGrads<Scalar>::zeros_like(net);
        slot2 = ParamGrads<Scalar>::zeros_like(net);
        initialized = true;
    }
};

namespace detail {

template <typename Scalar>
void step_tensor(OptimizerKind kind, Scalar* w, const Scalar* g, Scalar* s1, Scalar* s2,
                 std::size_t n, double lr, const OptimizerConfig& cfg) {
    switch (kind) {
        case OptimizerKind::sgd:
            for (std::size_t i = 0; i < n; ++i)
                w[i] = static_cast<Scalar>(static_cast<double>(w[i]) - lr * static_cast<double>(g[i]));
            break;
        case OptimizerKind::momentum:
            for (std::size_t i = 0; i < n; ++i) {
                const double v = cfg.momentum * static_cast<double>(s1[i]) + static_cast<double>(g[i]);
                s1[i] = static_cast<Scalar>(v);
                w[i] = static_cast<Scalar>(static_cast<double>(w[i]) - lr * v);
            }
            break;
        case OptimizerKind::adadelta:
            for (std::size_t i = 0; i < n; ++i) {
                const double gd = static_cast<double>(g[i]);
                double eg2 = cfg.rho * static_cast<double>(s1[i]) + (1.0 - cfg.rho) * gd * gd;
                const double dx = -std::sqrt(static_cast<double>(s2[i]) + cfg.epsilon) /
                                  std::sqrt(eg2 + cfg.epsilon) * gd;
                double edx2 = cfg.rho * static_cast<double>(s2[i]) + (1.0 - cfg.rho) * dx * dx;
                s1[i] = static_cast<Scalar>(eg2);
                s2[i] = static_cast<Scalar>(edx2);
                w[i] = static_cast<Scalar>(static_cast<double>(w[i]) + lr * dx);
            }
            break;
    }
}

} // namespace detail

/// Applies one update in place. `lr` is the effective (possibly decayed)
/// learning rate for the current epoch.
template <typename Scalar>
void optimizer_step(OptimizerState<Scalar>& state, Network<Scalar>& net,
                    const ParamGrads<Scalar>& grads, const OptimizerConfig& cfg, double lr) {
    cfg.validate();
    state.ensure(net);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].has_params()) continue;
        if (grads.weights[l].data.size() != net.weights[l].data.size() ||
            grads.biases[l].data.size() != net.biases[l].data.size())
            throw EngineError("gradient/parameter shape mismatch at layer " + std::to_string(l));
        detail::step_tensor(cfg.kind, net.weights[l].data.data(), grads.weights[l].data.data(),
                            state.slot1.weights[l].data.data(), state.slot2.weights[l].data.data(),
                            net.weights[l].data.size(), lr, cfg);
        detail::step_tensor(cfg.kind, net.biases[l].data.data(), grads.biases[l].data.data(),
                            state.slot1.biases[l].data.data(), state.slot2.biases[l].data.data(),
                            net.biases[l].data.size(), lr, cfg);
    }
}

} // namespace nnwm
