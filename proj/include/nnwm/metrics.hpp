#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "nnwm/codec.hpp"

namespace nnwm {

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Elementwise match fraction between extracted and true sequences (labels
/// for prediction-space methods, bits for parameter-space methods).
template <typename Seq>
double watermark_accuracy_raw(const Seq& extracted, const Seq& truth) {
    if (extracted.size() != truth.size())
        throw MetricsError("extracted/truth length mismatch: " + std::to_string(extracted.size()) +
                           " vs " + std::to_string(truth.size()));
    if (truth.empty()) throw MetricsError("empty watermark");
    std::size_t match = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (extracted[i] == truth[i]) ++match;
    return static_cast<double>(match) / static_cast<double>(truth.size());
}

/// Chance-corrected watermark accuracy: max((raw - 1/c) / (1 - 1/c), 0),
/// where c is the alphabet size of one watermark symbol.
inline double normalize_wm_accuracy(double raw, int c) {
    if (c < 2) throw MetricsError("chance denominator c must be >= 2");
    const double chance = 1.0 / static_cast<double>(c);
    const double v = (raw - chance) / (1.0 - chance);
    return v > 0.0 ? v : 0.0;
}

/// One row of an experiment table: a model at some pipeline stage, its
/// classification accuracy, and the raw/normalized watermark accuracy.
struct ExperimentReport {
    std::string stage;        // clean | embed | attack
    std::string method;       // W:LSB .. P:ING
    std::string attack;       // empty unless stage == attack
    std::string attack_params;
    double classification_accuracy = 0.0;
    double wm_accuracy_raw = 0.0;
    double wm_accuracy_normalized = 0.0;
    int c = 2; // chance denominator: k for P:*, 2 for W:*
    std::uint64_t seed = 0;
};

inline std::string report_csv_header() {
    return "stage,method,attack,attack_params,cls_acc,wm_raw,wm_norm,c,seed";
}

inline std::string to_csv_row(const ExperimentReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f", r.classification_accuracy, r.wm_accuracy_raw,
                  r.wm_accuracy_normalized);
    return r.stage + "," + r.method + "," + r.attack + "," + r.attack_params + "," + buf + "," +
           std::to_string(r.c) + "," + std::to_string(r.seed);
}

inline void append_reports_csv(const std::string& path, const std::vector<ExperimentReport>& rows,
                               bool write_header) {
    std::ofstream f(path, write_header ? (std::ios::out | std::ios::trunc)
                                       : (std::ios::out | std::ios::app));
    if (!f) throw MetricsError("cannot open " + path);
    if (write_header) f << report_csv_header() << "\n";
    for (const ExperimentReport& r : rows) f << to_csv_row(r) << "\n";
}

} // namespace nnwm
