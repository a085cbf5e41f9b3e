#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnwm {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor. Shape dims are positive; data length always equals
/// the shape product. The library's universal numeric value: inputs, logits,
/// predictions, weights.
template <typename Scalar>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<Scalar> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shp) : shape(std::move(shp)) {
        data.assign(numel_of(shape), Scalar{0});
    }

    Tensor(std::vector<std::size_t> shp, std::vector<Scalar> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (numel_of(shape) != data.size())
            throw TensorError("tensor shape/data size mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& shp) {
        std::size_t n = 1;
        for (std::size_t d : shp) {
            if (d == 0) throw TensorError("tensor dimension must be positive");
            n *= d;
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }

    /// Leading dimension (batch size for batched tensors).
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }

    /// Number of elements per leading-dimension row.
    std::size_t row_numel() const { return shape.empty() ? 0 : numel() / shape[0]; }

    Scalar* row(std::size_t r) { return data.data() + r * row_numel(); }
    const Scalar* row(std::size_t r) const { return data.data() + r * row_numel(); }

    bool all_finite() const {
        for (Scalar v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        Tensor<Other> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (Scalar v : data) out.data.push_back(static_cast<Other>(v));
        return out;
    }
};

inline std::string shape_to_string(const std::vector<std::size_t>& shp) {
    std::string s = "[";
    for (std::size_t i = 0; i < shp.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shp[i]);
    }
    return s + "]";
}

} // namespace nnwm
