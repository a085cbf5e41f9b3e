#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "nnwm/prng.hpp"

namespace nnwm {

class CodecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Bits = std::vector<std::uint8_t>; // one 0/1 value per entry

/// Bits usable per label for a k-class task.
inline int bits_per_label(int k) {
    if (k < 2) throw CodecError("need at least 2 classes");
    int b = 0;
    while ((1 << (b + 1)) <= k) ++b;
    return b; // floor(log2 k)
}

/// Number of carriers needed for an n-bit watermark: ceil(n / floor(log2 k)).
inline std::size_t carrier_count(std::size_t n_bits, int k) {
    if (n_bits == 0) throw CodecError("watermark must have at least 1 bit");
    const std::size_t b = static_cast<std::size_t>(bits_per_label(k));
    return (n_bits + b - 1) / b;
}

/// Chunks bits MSB-first into groups of floor(log2 k); the final partial
/// group is zero-padded on the right.
inline std::vector<int> bits_to_labels(const Bits& bits, int k) {
    const int b = bits_per_label(k);
    const std::size_t m = carrier_count(bits.size(), k);
    std::vector<int> labels(m, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] > 1) throw CodecError("bit values must be 0 or 1");
        const std::size_t group = i / static_cast<std::size_t>(b);
        const int pos = b - 1 - static_cast<int>(i % static_cast<std::size_t>(b));
        labels[group] |= static_cast<int>(bits[i]) << pos;
    }
    return labels;
}

/// Inverse of bits_to_labels, truncated back to n bits.
inline Bits labels_to_bits(const std::vector<int>& labels, int k, std::size_t n) {
    const int b = bits_per_label(k);
    Bits bits;
    bits.reserve(labels.size() * static_cast<std::size_t>(b));
    for (int label : labels) {
        if (label < 0 || label >= (1 << b))
            throw CodecError("label " + std::to_string(label) + " exceeds " +
                             std::to_string(b) + "-bit range");
        for (int pos = b - 1; pos >= 0; --pos)
            bits.push_back(static_cast<std::uint8_t>((label >> pos) & 1));
    }
    if (bits.size() < n) throw CodecError("labels carry fewer than n bits");
    bits.resize(n);
    return bits;
}

/// n random bits from a dedicated stream of `seed`.
inline Bits random_bits(std::size_t n, std::uint64_t seed) {
    SplitMix64 rng(seed ^ 0xB1755EEDULL);
    Bits bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = static_cast<std::uint8_t>(rng.next_u64() & 1);
    return bits;
}

/// MSB-first hex encoding; the final nibble is zero-padded on the right.
/// The bit count must be carried separately.
inline std::string bits_to_hex(const Bits& bits) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve((bits.size() + 3) / 4);
    for (std::size_t i = 0; i < bits.size(); i += 4) {
        int v = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            v <<= 1;
            if (i + j < bits.size()) v |= bits[i + j];
        }
        s.push_back(digits[v]);
    }
    return s;
}

inline Bits hex_to_bits(const std::string& hex, std::size_t n) {
    if (hex.size() * 4 < n) throw CodecError("hex string too short for " + std::to_string(n) + " bits");
    Bits bits;
    bits.reserve(hex.size() * 4);
    for (char c : hex) {
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
        else throw CodecError("invalid hex digit");
        for (int pos = 3; pos >= 0; --pos)
            bits.push_back(static_cast<std::uint8_t>((v >> pos) & 1));
    }
    bits.resize(n);
    return bits;
}

} // namespace nnwm
