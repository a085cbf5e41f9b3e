#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "nnwm/network.hpp"
#include "nnwm/prng.hpp"
#include "nnwm/tensor.hpp"

namespace nnwm {

class EngineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Softmax temperature and dropout behaviour for one forward pass. Dropout
/// samples only when train_mode is set and a dropout stream is supplied.
struct ForwardConfig {
    double temperature = 1.0;
    bool train_mode = false;
    SplitMix64* dropout_rng = nullptr;
};

namespace detail {

/// Output shape of one layer given its input shape (without batch dim).
/// Throws with the offending layer on any incompatibility.
inline std::vector<std::size_t> layer_output_shape(const LayerSpec& s,
                                                   const std::vector<std::size_t>& in,
                                                   std::size_t layer_index) {
    const std::string where =
        "layer " + std::to_string(layer_index) + " (" + std::string(layer_kind_name(s.kind)) + ")";
    auto numel = [](const std::vector<std::size_t>& shp) {
        std::size_t n = 1;
        for (std::size_t d : shp) n *= d;
        return n;
    };
    switch (s.kind) {
        case LayerKind::dense: {
            if (numel(in) != s.in)
                throw EngineError(where + ": expects " + std::to_string(s.in) + " inputs, got " +
                                  shape_to_string(in));
            return {s.out};
        }
        case LayerKind::conv2d: {
            if (in.size() != 3 || in[2] != s.in)
                throw EngineError(where + ": expects HxWx" + std::to_string(s.in) + " input, got " +
                                  shape_to_string(in));
            if (in[0] < s.kernel || in[1] < s.kernel)
                throw EngineError(where + ": input smaller than kernel");
            return {in[0] - s.kernel + 1, in[1] - s.kernel + 1, s.out};
        }
        case LayerKind::maxpool2x2: {
            if (in.size() != 3 || in[0] < 2 || in[1] < 2)
                throw EngineError(where + ": needs HxWxC input with H,W >= 2, got " +
                                  shape_to_string(in));
            return {in[0] / 2, in[1] / 2, in[2]};
        }
        case LayerKind::relu:
        case LayerKind::dropout:
            return in;
        case LayerKind::flatten:
            return {numel(in)};
    }
    throw EngineError(where + ": unknown layer kind");
}

} // namespace detail

/// Shape (without batch dim) produced by the network for a given input shape.
inline std::vector<std::size_t> infer_output_shape(const std::vector<LayerSpec>& specs,
                                                   std::vector<std::size_t> in) {
    for (std::size_t l = 0; l < specs.size(); ++l) in = detail::layer_output_shape(specs[l], in, l);
    return in;
}

/// Per-layer state captured during a forward pass, enough to backpropagate.
template <typename Scalar>
struct ForwardTrace {
    std::vector<Tensor<Scalar>> inputs;             // input of each layer
    std::vector<Tensor<Scalar>> dropout_scale;      // dropout layers: 0 or 1/(1-p) per element
    std::vector<std::vector<std::uint32_t>> pool_argmax; // maxpool layers: winning input index
    Tensor<Scalar> logits;
};

namespace detail {

// The forward and input-gradient kernels reduce within a row, so plain
// Scalar accumulation keeps results independent of how a batch is split.
// Only the parameter-gradient reductions run over the batch dimension and
// need the double accumulators below.
template <typename Scalar>
void dense_forward(const LayerSpec& s, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                   const Tensor<Scalar>& x, Tensor<Scalar>& y) {
    const std::size_t n = x.rows(), in = s.in, out = s.out;
    for (std::size_t r = 0; r < n; ++r) {
        const Scalar* xr = x.row(r);
        Scalar* yr = y.row(r);
        std::copy(b.data.data(), b.data.data() + out, yr);
        for (std::size_t k = 0; k < in; ++k) {
            const Scalar xv = xr[k];
            const Scalar* wk = w.data.data() + k * out;
            for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wk[j];
        }
    }
}

template <typename Scalar>
void conv2d_forward(const LayerSpec& s, const Tensor<Scalar>& w, const Tensor<Scalar>& b,
                    const Tensor<Scalar>& x, std::size_t h, std::size_t wd, Tensor<Scalar>& y) {
    const std::size_t n = x.rows(), c = s.in, f = s.out, k = s.kernel;
    const std::size_t oh = h - k + 1, ow = wd - k + 1;
    for (std::size_t r = 0; r < n; ++r) {
        const Scalar* xr = x.row(r);
        Scalar* yr = y.row(r);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t fi = 0; fi < f; ++fi) {
                    double acc = static_cast<double>(b.data[fi]);
                    const Scalar* wf = w.data.data() + fi * k * k * c;
                    for (std::size_t dy = 0; dy < k; ++dy) {
                        const Scalar* xrow = xr + ((oy + dy) * wd + ox) * c;
                        const Scalar* wrow = wf + dy * k * c;
                        for (std::size_t e = 0; e < k * c; ++e)
                            acc += static_cast<double>(xrow[e]) * static_cast<double>(wrow[e]);
                    }
                    yr[(oy * ow + ox) * f + fi] = static_cast<Scalar>(acc);
                }
    }
}

} // namespace detail

/// Runs the layers up to the logits (no softmax). Records a trace when
/// `trace` is non-null.
template <typename Scalar>
Tensor<Scalar> run_layers(const Network<Scalar>& net, const Tensor<Scalar>& batch,
                          const ForwardConfig& cfg, ForwardTrace<Scalar>* trace) {
    if (batch.shape.size() < 2) throw EngineError("batch tensor needs a leading batch dimension");
    const std::size_t n = batch.rows();

    if (trace) {
        trace->inputs.resize(net.layers.size());
        trace->dropout_scale.resize(net.layers.size());
        trace->pool_argmax.resize(net.layers.size());
    }

    Tensor<Scalar> cur = batch;
    std::vector<std::size_t> row_shape(batch.shape.begin() + 1, batch.shape.end());

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const LayerSpec& s = net.layers[l];
        std::vector<std::size_t> out_shape = detail::layer_output_shape(s, row_shape, l);
        if (trace) trace->inputs[l] = cur;

        Tensor<Scalar> next;
        switch (s.kind) {
            case LayerKind::dense: {
                std::vector<std::size_t> shp = {n, s.out};
                next = Tensor<Scalar>(shp);
                detail::dense_forward(s, net.weights[l], net.biases[l], cur, next);
                break;
            }
            case LayerKind::conv2d: {
                next = Tensor<Scalar>({n, out_shape[0], out_shape[1], out_shape[2]});
                detail::conv2d_forward(s, net.weights[l], net.biases[l], cur, row_shape[0],
                                       row_shape[1], next);
                break;
            }
            case LayerKind::maxpool2x2: {
                const std::size_t h = row_shape[0], wd = row_shape[1], c = row_shape[2];
                const std::size_t oh = h / 2, ow = wd / 2;
                next = Tensor<Scalar>({n, oh, ow, c});
                std::vector<std::uint32_t>* am = nullptr;
                if (trace) {
                    trace->pool_argmax[l].assign(n * oh * ow * c, 0);
                    am = &trace->pool_argmax[l];
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const Scalar* xr = cur.row(r);
                    Scalar* yr = next.row(r);
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox)
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                std::size_t best = ((2 * oy) * wd + 2 * ox) * c + ch;
                                Scalar bv = xr[best];
                                for (int dy = 0; dy < 2; ++dy)
                                    for (int dx = 0; dx < 2; ++dx) {
                                        const std::size_t idx =
                                            ((2 * oy + dy) * wd + 2 * ox + dx) * c + ch;
                                        // first max wins on ties (row-major scan)
                                        if (xr[idx] > bv) {
                                            bv = xr[idx];
                                            best = idx;
                                        }
                                    }
                                const std::size_t o = (oy * ow + ox) * c + ch;
                                yr[o] = bv;
                                if (am) (*am)[r * oh * ow * c + o] = static_cast<std::uint32_t>(best);
                            }
                }
                break;
            }
            case LayerKind::relu: {
                next = cur;
                for (Scalar& v : next.data) v = v > Scalar{0} ? v : Scalar{0};
                break;
            }
            case LayerKind::dropout: {
                const bool active = cfg.train_mode && s.dropout_rate > 0.0f;
                if (active && !cfg.dropout_rng)
                    throw EngineError("dropout in train mode needs a dropout stream");
                next = cur;
                if (active) {
                    const double p = s.dropout_rate;
                    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - p));
                    Tensor<Scalar> mask({next.shape});
                    // drawn row-major over the whole batch: replay-stable
                    for (std::size_t i = 0; i < next.data.size(); ++i) {
                        const bool keep = cfg.dropout_rng->next_double() >= p;
                        mask.data[i] = keep ? scale : Scalar{0};
                        next.data[i] *= mask.data[i];
                    }
                    if (trace) trace->dropout_scale[l] = std::move(mask);
                } else if (trace) {
                    trace->dropout_scale[l] = Tensor<Scalar>(); // identity
                }
                break;
            }
            case LayerKind::flatten: {
                next = cur;
                next.shape = {n, out_shape[0]};
                break;
            }
        }
        cur = std::move(next);
        row_shape = std::move(out_shape);
    }

    if (row_shape.size() != 1)
        throw EngineError("network output must be flat class scores; add a flatten layer");
    if (trace) trace->logits = cur;
    return cur;
}

/// Numerically stable temperature softmax, row-wise, double accumulation.
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& logits, double temperature) {
    if (temperature <= 0.0) throw EngineError("temperature must be positive");
    Tensor<Scalar> out = logits;
    const std::size_t n = logits.rows(), k = logits.row_numel();
    for (std::size_t r = 0; r < n; ++r) {
        const Scalar* zr = logits.row(r);
        Scalar* pr = out.row(r);
        double mx = static_cast<double>(zr[0]) / temperature;
        for (std::size_t j = 1; j < k; ++j)
            mx = std::max(mx, static_cast<double>(zr[j]) / temperature);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double e = std::exp(static_cast<double>(zr[j]) / temperature - mx);
            pr[j] = static_cast<Scalar>(e);
            sum += e;
        }
        for (std::size_t j = 0; j < k; ++j)
            pr[j] = static_cast<Scalar>(static_cast<double>(pr[j]) / sum);
    }
    return out;
}

/// Forward pass to per-row class probabilities at the configured temperature.
template <typename Scalar>
Tensor<Scalar> forward(const Network<Scalar>& net, const Tensor<Scalar>& batch,
                       const ForwardConfig& cfg = {}) {
    Tensor<Scalar> logits = run_layers(net, batch, cfg, static_cast<ForwardTrace<Scalar>*>(nullptr));
    if (!logits.all_finite()) throw EngineError("non-finite activations in forward pass");
    return softmax_rows(logits, cfg.temperature);
}

/// Parameter-shaped gradient container mirroring a network's tensors.
template <typename Scalar>
struct ParamGrads {
    std::vector<Tensor<Scalar>> weights;
    std::vector<Tensor<Scalar>> biases;

    static ParamGrads zeros_like(const Network<Scalar>& net) {
        ParamGrads g;
        g.weights.resize(net.layers.size());
        g.biases.resize(net.layers.size());
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            if (!net.layers[l].has_params()) continue;
            g.weights[l] = Tensor<Scalar>(net.weights[l].shape);
            g.biases[l] = Tensor<Scalar>(net.biases[l].shape);
        }
        return g;
    }

    std::vector<Scalar> flatten(const Network<Scalar>& net) const {
        std::vector<Scalar> v;
        v.reserve(net.param_count());
        for (std::size_t l = 0; l < weights.size(); ++l) {
            v.insert(v.end(), weights[l].data.begin(), weights[l].data.end());
            v.insert(v.end(), biases[l].data.begin(), biases[l].data.end());
        }
        return v;
    }

    /// Scatter-add into the canonical parameter vector view.
    void add_at_canonical(const Network<Scalar>& net, std::size_t offset,
                          const std::vector<Scalar>& g) {
        std::size_t pos = 0; // canonical cursor
        std::size_t todo_begin = offset, todo_end = offset + g.size();
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            for (Tensor<Scalar>* t : {&weights[l], &biases[l]}) {
                const std::size_t len = t->data.size();
                const std::size_t lo = std::max(pos, todo_begin);
                const std::size_t hi = std::min(pos + len, todo_end);
                for (std::size_t i = lo; i < hi; ++i) t->data[i - pos] += g[i - offset];
                pos += len;
            }
        }
        if (todo_end > pos) throw EngineError("regularizer gradient exceeds parameter count");
    }
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> dense_backward(const LayerSpec& s, const Tensor<Scalar>& w, const Tensor<Scalar>& x,
                              const Tensor<Scalar>& dy, Tensor<Scalar>& dw, Tensor<Scalar>& db) {
    const std::size_t n = x.rows(), in = s.in, out = s.out;
    Tensor<Scalar> dx(x.shape);

    // dX = dY * W^T, via a transposed weight copy so the inner loop streams
    std::vector<Scalar> wt(in * out);
    for (std::size_t k = 0; k < in; ++k)
        for (std::size_t j = 0; j < out; ++j) wt[j * in + k] = w.data[k * out + j];
    for (std::size_t r = 0; r < n; ++r) {
        const Scalar* dyr = dy.row(r);
        Scalar* dxr = dx.row(r);
        for (std::size_t j = 0; j < out; ++j) {
            const Scalar g = dyr[j];
            if (g == Scalar{0}) continue;
            const Scalar* wtj = wt.data() + j * in;
            for (std::size_t k = 0; k < in; ++k) dxr[k] += g * wtj[k];
        }
    }

    // Batch reductions accumulate in double so the result is independent of
    // how a batch is partitioned (needed by the split-gradient trainers).
    std::vector<double> acc(out);
    for (std::size_t k = 0; k < in; ++k) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            const double xv = static_cast<double>(x.row(r)[k]);
            if (xv == 0.0) continue;
            const Scalar* dyr = dy.row(r);
            for (std::size_t j = 0; j < out; ++j)
                acc[j] += xv * static_cast<double>(dyr[j]);
        }
        Scalar* dwk = dw.data.data() + k * out;
        for (std::size_t j = 0; j < out; ++j)
            dwk[j] = static_cast<Scalar>(static_cast<double>(dwk[j]) + acc[j]);
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const Scalar* dyr = dy.row(r);
        for (std::size_t j = 0; j < out; ++j) acc[j] += static_cast<double>(dyr[j]);
    }
    for (std::size_t j = 0; j < out; ++j)
        db.data[j] = static_cast<Scalar>(static_cast<double>(db.data[j]) + acc[j]);

    return dx;
}

template <typename Scalar>
Tensor<Scalar> conv2d_backward(const LayerSpec& s, const Tensor<Scalar>& w, const Tensor<Scalar>& x,
                               std::size_t h, std::size_t wd, const Tensor<Scalar>& dy,
                               Tensor<Scalar>& dw, Tensor<Scalar>& db) {
    const std::size_t n = x.rows(), c = s.in, f = s.out, k = s.kernel;
    const std::size_t oh = h - k + 1, ow = wd - k + 1;
    Tensor<Scalar> dx(x.shape);

    std::vector<double> dw_acc(dw.data.size(), 0.0);
    std::vector<double> db_acc(f, 0.0);

    for (std::size_t r = 0; r < n; ++r) {
        const Scalar* xr = x.row(r);
        const Scalar* dyr = dy.row(r);
        Scalar* dxr = dx.row(r);
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox)
                for (std::size_t fi = 0; fi < f; ++fi) {
                    const double g = static_cast<double>(dyr[(oy * ow + ox) * f + fi]);
                    if (g == 0.0) continue;
                    db_acc[fi] += g;
                    const Scalar* wf = w.data.data() + fi * k * k * c;
                    double* dwf = dw_acc.data() + fi * k * k * c;
                    for (std::size_t dy2 = 0; dy2 < k; ++dy2) {
                        const std::size_t xoff = ((oy + dy2) * wd + ox) * c;
                        const std::size_t woff = dy2 * k * c;
                        for (std::size_t e = 0; e < k * c; ++e) {
                            dwf[woff + e] += g * static_cast<double>(xr[xoff + e]);
                            dxr[xoff + e] += static_cast<Scalar>(g * static_cast<double>(wf[woff + e]));
                        }
                    }
                }
    }
    for (std::size_t i = 0; i < dw.data.size(); ++i)
        dw.data[i] = static_cast<Scalar>(static_cast<double>(dw.data[i]) + dw_acc[i]);
    for (std::size_t j = 0; j < f; ++j)
        db.data[j] = static_cast<Scalar>(static_cast<double>(db.data[j]) + db_acc[j]);
    return dx;
}

} // namespace detail

/// Backpropagates d(loss)/d(logits) through the traced forward pass,
/// accumulating parameter gradients.
template <typename Scalar>
void backward_from_logits(const Network<Scalar>& net, const ForwardTrace<Scalar>& trace,
                          const Tensor<Scalar>& dlogits, ParamGrads<Scalar>& grads) {
    Tensor<Scalar> d = dlogits;
    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& s = net.layers[li];
        const Tensor<Scalar>& x = trace.inputs[li];
        switch (s.kind) {
            case LayerKind::dense:
                d = detail::dense_backward(s, net.weights[li], x, d, grads.weights[li],
                                           grads.biases[li]);
                break;
            case LayerKind::conv2d:
                d = detail::conv2d_backward(s, net.weights[li], x, x.shape[1], x.shape[2], d,
                                            grads.weights[li], grads.biases[li]);
                break;
            case LayerKind::maxpool2x2: {
                Tensor<Scalar> dx(x.shape);
                const std::vector<std::uint32_t>& am = trace.pool_argmax[li];
                const std::size_t per_row_out = d.row_numel();
                const std::size_t n = x.rows();
                for (std::size_t r = 0; r < n; ++r) {
                    Scalar* dxr = dx.row(r);
                    const Scalar* dr = d.row(r);
                    const std::uint32_t* ar = am.data() + r * per_row_out;
                    for (std::size_t o = 0; o < per_row_out; ++o) dxr[ar[o]] += dr[o];
                }
                d = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                Tensor<Scalar> dx = d;
                for (std::size_t i = 0; i < dx.data.size(); ++i)
                    if (!(x.data[i] > Scalar{0})) dx.data[i] = Scalar{0};
                dx.shape = x.shape;
                d = std::move(dx);
                break;
            }
            case LayerKind::dropout: {
                const Tensor<Scalar>& mask = trace.dropout_scale[li];
                Tensor<Scalar> dx = d;
                if (!mask.data.empty())
                    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= mask.data[i];
                dx.shape = x.shape;
                d = std::move(dx);
                break;
            }
            case LayerKind::flatten: {
                d.shape = x.shape;
                break;
            }
        }
    }
}

/// One regularizer contribution: a scalar value plus its gradient over a
/// contiguous slice of the canonical parameter vector starting at `offset`.
template <typename Scalar>
struct RegContribution {
    double value = 0.0;
    std::size_t offset = 0;
    std::vector<Scalar> grad;
};

template <typename Scalar>
using Regularizer = std::function<RegContribution<Scalar>(const Network<Scalar>&)>;

/// Composite objective: optional hard-label cross entropy (at T=1), optional
/// soft-target cross entropy at `soft_temperature`, plus parameter-space
/// regularizers. Weights default to 1 so the plain sum matches the mean-CE
/// contract; distillation and ingrain-style trainers set them explicitly.
template <typename Scalar>
struct ObjectiveOptions {
    const std::vector<int>* hard_labels = nullptr;
    double hard_weight = 1.0;
    const Tensor<Scalar>* soft_targets = nullptr;
    double soft_temperature = 1.0;
    double soft_weight = 1.0;
    const std::vector<double>* soft_row_weights = nullptr; // overrides soft_weight per row
    const std::vector<Regularizer<Scalar>>* regularizers = nullptr;
    bool train_mode = false;
    SplitMix64* dropout_rng = nullptr;
};

template <typename Scalar>
struct ObjectiveResult {
    double loss = 0.0;
    ParamGrads<Scalar> grads;
    std::size_t hard_correct = 0; // argmax matches, when hard labels given
};

inline constexpr double kProbFloor = 1e-12; // clamp before log

/// Loss and exact analytic gradients of the composite objective, via a single
/// traced forward and a single backward pass.
template <typename Scalar>
ObjectiveResult<Scalar> objective_grads(const Network<Scalar>& net, const Tensor<Scalar>& batch,
                                        const ObjectiveOptions<Scalar>& opt) {
    if (!opt.hard_labels && !opt.soft_targets)
        throw EngineError("objective needs hard labels and/or soft targets");
    const std::size_t n = batch.rows();
    if (opt.hard_labels && opt.hard_labels->size() != n)
        throw EngineError("hard label count does not match batch size");
    if (opt.soft_targets && opt.soft_targets->rows() != n)
        throw EngineError("soft target rows do not match batch size");
    if (opt.soft_temperature <= 0.0) throw EngineError("soft temperature must be positive");

    ForwardConfig fcfg;
    fcfg.train_mode = opt.train_mode;
    fcfg.dropout_rng = opt.dropout_rng;
    ForwardTrace<Scalar> trace;
    Tensor<Scalar> logits = run_layers(net, batch, fcfg, &trace);
    const std::size_t k = logits.row_numel();

    ObjectiveResult<Scalar> res;
    res.grads = ParamGrads<Scalar>::zeros_like(net);
    Tensor<Scalar> dlogits(logits.shape);
    double loss = 0.0;

    if (opt.hard_labels) {
        Tensor<Scalar> p1 = softmax_rows(logits, 1.0);
        const double scale = opt.hard_weight / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            const int label = (*opt.hard_labels)[r];
            if (label < 0 || static_cast<std::size_t>(label) >= k)
                throw EngineError("label " + std::to_string(label) + " out of range for " +
                                  std::to_string(k) + " classes");
            const Scalar* pr = p1.row(r);
            loss -= scale * std::log(std::max(static_cast<double>(pr[label]), kProbFloor));
            Scalar* dr = dlogits.row(r);
            for (std::size_t j = 0; j < k; ++j)
                dr[j] += static_cast<Scalar>(scale * static_cast<double>(pr[j]));
            dr[label] -= static_cast<Scalar>(scale);
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j)
                if (pr[j] > pr[arg]) arg = j; // ties toward lowest index
            if (arg == static_cast<std::size_t>(label)) ++res.hard_correct;
        }
    }

    if (opt.soft_targets) {
        const Tensor<Scalar>& t = *opt.soft_targets;
        if (t.row_numel() != k) throw EngineError("soft target width does not match class count");
        for (std::size_t r = 0; r < n; ++r) {
            double srow = 0.0;
            for (std::size_t j = 0; j < k; ++j) srow += static_cast<double>(t.row(r)[j]);
            if (std::abs(srow - 1.0) > 1e-5)
                throw EngineError("soft target row " + std::to_string(r) + " does not sum to 1");
        }
        const double temp = opt.soft_temperature;
        Tensor<Scalar> pt = softmax_rows(logits, temp);
        for (std::size_t r = 0; r < n; ++r) {
            const double w = (opt.soft_row_weights ? (*opt.soft_row_weights)[r] : opt.soft_weight) /
                             static_cast<double>(n);
            if (w == 0.0) continue;
            const Scalar* pr = pt.row(r);
            const Scalar* tr = t.row(r);
            Scalar* dr = dlogits.row(r);
            double ce = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                ce -= static_cast<double>(tr[j]) *
                      std::log(std::max(static_cast<double>(pr[j]), kProbFloor));
                dr[j] += static_cast<Scalar>(w / temp *
                                             (static_cast<double>(pr[j]) - static_cast<double>(tr[j])));
            }
            loss += w * ce;
        }
    }

    backward_from_logits(net, trace, dlogits, res.grads);

    if (opt.regularizers) {
        for (const Regularizer<Scalar>& reg : *opt.regularizers) {
            RegContribution<Scalar> c = reg(net);
            loss += c.value;
            res.grads.add_at_canonical(net, c.offset, c.grad);
        }
    }

    if (!std::isfinite(loss)) throw EngineError("non-finite loss");
    res.loss = loss;
    return res;
}

} // namespace nnwm
