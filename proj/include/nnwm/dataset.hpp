#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "nnwm/prng.hpp"
#include "nnwm/tensor.hpp"

namespace nnwm {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class BadIdxMagicError : public DataError {
public:
    explicit BadIdxMagicError(const std::string& path) : DataError("bad IDX magic in " + path) {}
};
class IdxTruncatedError : public DataError {
public:
    explicit IdxTruncatedError(const std::string& path) : DataError("truncated IDX file " + path) {}
};
class IdxCountMismatchError : public DataError {
public:
    IdxCountMismatchError(std::size_t images, std::size_t labels)
        : DataError("IDX image/label count mismatch: " + std::to_string(images) + " images vs " +
                    std::to_string(labels) + " labels") {}
};

/// A labeled dataset. Images are [N,H,W,C] or [N,features] with values in
/// [0,1]; labels are integers in [0,k).
struct Dataset {
    Tensor<float> images;
    std::vector<int> labels;
    int num_classes = 0;
    std::string provenance;

    std::size_t size() const { return images.rows(); }

    void check() const {
        if (images.rows() != labels.size()) throw DataError("image/label count mismatch");
        for (int l : labels)
            if (l < 0 || l >= num_classes) throw DataError("label out of range");
    }
};

namespace detail {

inline std::uint32_t read_be_u32(std::ifstream& f, const std::string& path) {
    std::uint8_t b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw IdxTruncatedError(path);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline void write_be_u32(std::ofstream& f, std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace detail

/// Loads an IDX image/label pair (the MNIST container format). Pixels are
/// scaled by 1/255 into [0,1]; shape comes out [N,H,W,1].
inline Dataset load_idx_dataset(const std::string& image_path, const std::string& label_path) {
    std::ifstream fi(image_path, std::ios::binary);
    if (!fi) throw DataError("cannot open " + image_path);
    if (detail::read_be_u32(fi, image_path) != 0x00000803u) throw BadIdxMagicError(image_path);
    const std::uint32_t n = detail::read_be_u32(fi, image_path);
    const std::uint32_t h = detail::read_be_u32(fi, image_path);
    const std::uint32_t w = detail::read_be_u32(fi, image_path);

    std::vector<std::uint8_t> raw(static_cast<std::size_t>(n) * h * w);
    if (!fi.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
        throw IdxTruncatedError(image_path);

    std::ifstream fl(label_path, std::ios::binary);
    if (!fl) throw DataError("cannot open " + label_path);
    if (detail::read_be_u32(fl, label_path) != 0x00000801u) throw BadIdxMagicError(label_path);
    const std::uint32_t nl = detail::read_be_u32(fl, label_path);
    if (nl != n) throw IdxCountMismatchError(n, nl);
    std::vector<std::uint8_t> raw_labels(nl);
    if (!fl.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(nl)))
        throw IdxTruncatedError(label_path);

    Dataset ds;
    ds.images = Tensor<float>({n, h, w, 1});
    for (std::size_t i = 0; i < raw.size(); ++i)
        ds.images.data[i] = static_cast<float>(raw[i]) * (1.0f / 255.0f);
    ds.labels.assign(raw_labels.begin(), raw_labels.end());
    int k = 0;
    for (int l : ds.labels) k = std::max(k, l + 1);
    ds.num_classes = std::max(k, 2);
    ds.provenance = "idx:" + image_path;
    return ds;
}

/// Writes a dataset as an IDX pair (pixels quantized to bytes).
inline void save_idx_dataset(const Dataset& ds, const std::string& image_path,
                             const std::string& label_path) {
    if (ds.images.shape.size() != 4 || ds.images.shape[3] != 1)
        throw DataError("IDX export needs [N,H,W,1] images");
    std::ofstream fi(image_path, std::ios::binary | std::ios::trunc);
    if (!fi) throw DataError("cannot open " + image_path + " for writing");
    detail::write_be_u32(fi, 0x00000803u);
    detail::write_be_u32(fi, static_cast<std::uint32_t>(ds.images.shape[0]));
    detail::write_be_u32(fi, static_cast<std::uint32_t>(ds.images.shape[1]));
    detail::write_be_u32(fi, static_cast<std::uint32_t>(ds.images.shape[2]));
    for (float v : ds.images.data) {
        const int q = static_cast<int>(std::lround(static_cast<double>(v) * 255.0));
        const std::uint8_t b = static_cast<std::uint8_t>(std::min(255, std::max(0, q)));
        fi.write(reinterpret_cast<const char*>(&b), 1);
    }
    std::ofstream fl(label_path, std::ios::binary | std::ios::trunc);
    if (!fl) throw DataError("cannot open " + label_path + " for writing");
    detail::write_be_u32(fl, 0x00000801u);
    detail::write_be_u32(fl, static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) {
        const std::uint8_t b = static_cast<std::uint8_t>(l);
        fl.write(reinterpret_cast<const char*>(&b), 1);
    }
}

/// Deterministic k-blob classification set with sigma = 0.1 Gaussian noise,
/// clipped to [0,1]. Class means are evenly spaced on a circle of radius 0.35
/// around the box center when feature_dim == 2; in higher dimensions each
/// mean coordinate is drawn uniformly from 0.5 +- 0.15 (sphere-surface means
/// spread the class separation so thin across hundreds of coordinates that
/// gradient training stalls) and every sample additionally carries a
/// random-walk texture of per-sample strength. The texture gives classes
/// MNIST-like within-class variability: without it the inputs collapse onto
/// k tight points and prediction-space watermark signal has nothing to ride
/// on. Exactly n_per_class samples per class, class-major order.
inline Dataset make_synthetic_dataset(std::uint64_t seed, std::size_t n_per_class, int k,
                                      std::size_t feature_dim) {
    if (k < 2) throw DataError("need at least 2 classes");
    if (n_per_class == 0) throw DataError("need at least 1 sample per class");
    if (feature_dim < 2) throw DataError("need at least 2 features");

    SplitMix64 rng = make_stream(seed, RngStream::synthetic);
    const double radius = 0.35, amp = 0.15, sigma = 0.1, texture_amp = 0.35;

    std::vector<std::vector<double>> means(static_cast<std::size_t>(k),
                                           std::vector<double>(feature_dim, 0.5));
    for (int c = 0; c < k; ++c) {
        if (feature_dim == 2) {
            const double a = 2.0 * std::numbers::pi * c / k;
            means[c][0] += radius * std::cos(a);
            means[c][1] += radius * std::sin(a);
        } else {
            for (std::size_t d = 0; d < feature_dim; ++d)
                means[c][d] += amp * rng.next_uniform(-1.0, 1.0);
        }
    }

    // texture grid: 2-D when the width is a perfect square, else a line
    std::size_t th = 1, tw = feature_dim;
    for (std::size_t s = 2; s * s <= feature_dim; ++s)
        if (s * s == feature_dim) {
            th = tw = s;
            break;
        }
    std::vector<double> texture(feature_dim);

    const std::size_t n = n_per_class * static_cast<std::size_t>(k);
    Dataset ds;
    ds.images = Tensor<float>({n, feature_dim});
    ds.labels.resize(n);
    ds.num_classes = k;
    ds.provenance = "synthetic:seed=" + std::to_string(seed);
    std::size_t row = 0;
    for (int c = 0; c < k; ++c)
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            float* px = ds.images.row(row);
            double a_tex = 0.0;
            if (feature_dim > 2) {
                std::fill(texture.begin(), texture.end(), 0.0);
                a_tex = texture_amp * rng.next_double();
                std::size_t y = th / 2, x = tw / 2;
                for (std::size_t step = 0; step < feature_dim; ++step) {
                    texture[y * tw + x] = rng.next_double();
                    switch (rng.next_index(4)) {
                        case 0: if (y > 0) --y; break;
                        case 1: if (y + 1 < th) ++y; break;
                        case 2: if (x > 0) --x; break;
                        case 3: if (x + 1 < tw) ++x; break;
                    }
                }
            }
            for (std::size_t d = 0; d < feature_dim; ++d) {
                double v = means[c][d] + sigma * rng.next_gaussian() + a_tex * texture[d];
                px[d] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
            ds.labels[row] = c;
        }
    return ds;
}

/// Reshapes flat feature rows into [N,H,W,C] images (e.g. for CNN input).
inline Dataset reshape_dataset(Dataset ds, std::size_t h, std::size_t w, std::size_t c) {
    if (ds.images.row_numel() != h * w * c) throw DataError("dataset rows do not fit HxWxC");
    ds.images.shape = {ds.images.rows(), h, w, c};
    return ds;
}

/// Subset by index list (copying).
inline Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    std::vector<std::size_t> shape = ds.images.shape;
    shape[0] = idx.size();
    out.images = Tensor<float>(shape);
    out.labels.resize(idx.size());
    const std::size_t rn = ds.images.row_numel();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(ds.images.row(idx[i]), ds.images.row(idx[i]) + rn, out.images.row(i));
        out.labels[i] = ds.labels[idx[i]];
    }
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance;
    return out;
}

/// Splits off a refining set of round(fraction * N) rows; the two parts are
/// disjoint and together cover the input. Deterministic per seed.
inline std::pair<Dataset, Dataset> split_refining_set(const Dataset& ds, double fraction,
                                                      std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw DataError("split fraction must be in (0,1)");
    const std::size_t n = ds.size();
    const std::size_t r = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (r == 0 || r >= n) throw DataError("split leaves an empty part");

    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    SplitMix64 rng = make_stream(seed, RngStream::split);
    shuffle_indices(idx, rng);

    std::vector<std::size_t> refining_idx(idx.begin(), idx.begin() + r);
    std::vector<std::size_t> train_idx(idx.begin() + r, idx.end());
    Dataset train = take_rows(ds, train_idx);
    Dataset refining = take_rows(ds, refining_idx);
    train.provenance = ds.provenance + ":train";
    refining.provenance = ds.provenance + ":refining";
    return {std::move(train), std::move(refining)};
}

} // namespace nnwm
