#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnwm/attacks.hpp"
#include "nnwm/carrier.hpp"
#include "nnwm/dataset.hpp"
#include "nnwm/metrics.hpp"
#include "nnwm/serialize.hpp"
#include "nnwm/watermark.hpp"

namespace nnwm {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON <-> domain types
// ---------------------------------------------------------------------------

inline LayerSpec layer_spec_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense")
        return LayerSpec::dense_layer(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
    if (kind == "conv2d")
        return LayerSpec::conv2d_layer(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>(),
                                       j.value("kernel", 3));
    if (kind == "maxpool2x2") return LayerSpec::maxpool_layer();
    if (kind == "relu") return LayerSpec::relu_layer();
    if (kind == "dropout") return LayerSpec::dropout_layer(j.at("rate").get<float>());
    if (kind == "flatten") return LayerSpec::flatten_layer();
    throw ConfigError("unknown layer kind: " + kind);
}

inline json layer_spec_to_json(const LayerSpec& s) {
    json j;
    j["kind"] = layer_kind_name(s.kind);
    if (s.kind == LayerKind::dense) {
        j["in"] = s.in;
        j["out"] = s.out;
    } else if (s.kind == LayerKind::conv2d) {
        j["in"] = s.in;
        j["out"] = s.out;
        j["kernel"] = s.kernel;
    } else if (s.kind == LayerKind::dropout) {
        j["rate"] = s.dropout_rate;
    }
    return j;
}

inline std::vector<LayerSpec> arch_from_json(const json& j) {
    std::vector<LayerSpec> specs;
    for (const json& e : j) specs.push_back(layer_spec_from_json(e));
    try {
        validate_layer_specs(specs);
    } catch (const NetworkError& e) {
        throw ConfigError(e.what());
    }
    return specs;
}

inline OptimizerConfig optimizer_from_json(const json& j) {
    OptimizerConfig cfg;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "sgd") cfg.kind = OptimizerKind::sgd;
    else if (kind == "momentum") cfg.kind = OptimizerKind::momentum;
    else if (kind == "adadelta") cfg.kind = OptimizerKind::adadelta;
    else throw ConfigError("unknown optimizer kind: " + kind);
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.momentum = j.value("momentum", 0.9);
    cfg.rho = j.value("rho", 0.95);
    cfg.epsilon = j.value("epsilon", 1e-8);
    cfg.lr_decay = j.value("lr_decay", 1.0);
    cfg.decay_interval_epochs = j.value("decay_interval_epochs", 0);
    cfg.validate();
    return cfg;
}

inline TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.optimizer = optimizer_from_json(j.at("optimizer"));
    if (!j.contains("seed")) throw ConfigError("train config: seed is required");
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
}

inline json watermark_spec_to_json(const WatermarkSpec& spec) {
    json j;
    j["bits_hex"] = bits_to_hex(spec.bits);
    j["n"] = spec.n();
    j["seed"] = spec.seed;
    j["kind"] = carrier_kind_name(spec.carrier_kind);
    j["k"] = spec.k;
    j["height"] = spec.height;
    j["width"] = spec.width;
    j["channels"] = spec.channels;
    return j;
}

inline WatermarkSpec watermark_spec_from_json(const json& j) {
    WatermarkSpec spec;
    spec.bits = hex_to_bits(j.at("bits_hex").get<std::string>(), j.at("n").get<std::size_t>());
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.carrier_kind = carrier_kind_from_name(j.at("kind").get<std::string>());
    spec.k = j.at("k").get<int>();
    spec.height = j.at("height").get<std::size_t>();
    spec.width = j.at("width").get<std::size_t>();
    spec.channels = j.at("channels").get<std::size_t>();
    return spec;
}

/// Sidecar: everything needed to extract the watermark from the model file.
/// The secret bits and (for sta) the key seed live only here.
inline json sidecar_to_json(const EmbeddedModel& model) {
    json j;
    const EmbedConfig& c = model.config;
    switch (c.method) {
        case EmbedMethod::lsb: j["method"] = "lsb"; j["bits_per_param"] = c.lsb_bits_per_param; break;
        case EmbedMethod::sgn: j["method"] = "sgn"; j["lambda_s"] = c.lambda_s; break;
        case EmbedMethod::cor: j["method"] = "cor"; j["lambda_c"] = c.lambda_c; break;
        case EmbedMethod::sta:
            j["method"] = "sta";
            j["sta_key_seed"] = c.sta_key_seed;
            j["sta_layer"] = c.sta_layer;
            break;
        case EmbedMethod::cap: j["method"] = "cap"; break;
        case EmbedMethod::ing:
            j["method"] = "ing";
            j["lambda"] = c.ingrain_lambda;
            j["temperature"] = c.ingrain_temperature;
            break;
    }
    j["watermark"] = watermark_spec_to_json(model.spec);
    return j;
}

inline std::pair<EmbedConfig, WatermarkSpec> sidecar_from_json(const json& j) {
    EmbedConfig cfg;
    const std::string method = j.at("method").get<std::string>();
    if (method == "lsb") {
        cfg.method = EmbedMethod::lsb;
        cfg.lsb_bits_per_param = j.at("bits_per_param").get<int>();
    } else if (method == "sgn") {
        cfg.method = EmbedMethod::sgn;
        cfg.lambda_s = j.at("lambda_s").get<double>();
    } else if (method == "cor") {
        cfg.method = EmbedMethod::cor;
        cfg.lambda_c = j.at("lambda_c").get<double>();
    } else if (method == "sta") {
        cfg.method = EmbedMethod::sta;
        cfg.sta_key_seed = j.at("sta_key_seed").get<std::uint64_t>();
        cfg.sta_layer = j.at("sta_layer").get<std::size_t>();
    } else if (method == "cap") {
        cfg.method = EmbedMethod::cap;
    } else if (method == "ing") {
        cfg.method = EmbedMethod::ing;
        cfg.ingrain_lambda = j.at("lambda").get<double>();
        cfg.ingrain_temperature = j.at("temperature").get<double>();
    } else {
        throw ConfigError("unknown embed method in sidecar: " + method);
    }
    return {cfg, watermark_spec_from_json(j.at("watermark"))};
}

inline json report_to_json(const ExperimentReport& r) {
    json j;
    j["stage"] = r.stage;
    j["method"] = r.method;
    j["attack"] = r.attack;
    j["attack_params"] = r.attack_params;
    j["cls_acc"] = r.classification_accuracy;
    j["wm_raw"] = r.wm_accuracy_raw;
    j["wm_norm"] = r.wm_accuracy_normalized;
    j["c"] = r.c;
    j["seed"] = r.seed;
    return j;
}

inline ExperimentReport report_from_json(const json& j) {
    ExperimentReport r;
    r.stage = j.at("stage").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.attack_params = j.at("attack_params").get<std::string>();
    r.classification_accuracy = j.at("cls_acc").get<double>();
    r.wm_accuracy_raw = j.at("wm_raw").get<double>();
    r.wm_accuracy_normalized = j.at("wm_norm").get<double>();
    r.c = j.at("c").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
}

inline void save_json(const json& j, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot open " + path + " for writing");
    f << j.dump(2) << "\n";
}

inline json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open " + path);
    return json::parse(f);
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct MethodEntry {
    EmbedConfig config;
    std::size_t ingrainer_epochs = 1000;
    std::uint64_t ingrainer_seed = 0;
    std::string label;  // P:CAP, P:ING(2), ...
    std::string slug;   // file-name fragment
};

struct AttackEntry {
    AttackConfig config;
    TrainConfig train; // used by distill / prune / finetune
    bool has_train = false;
    std::string label;  // distill, prune, ...
    std::string params; // "T=10;alpha=0.5"
};

struct ExperimentConfig {
    // dataset
    bool synthetic = true;
    std::uint64_t data_seed = 0, test_seed = 0;
    std::size_t n_per_class = 0, feature_dim = 0;
    double test_fraction = 0.2; // synthetic mode: held-out test share
    int k = 0;
    std::string train_images, train_labels, test_images, test_labels; // idx mode
    std::optional<std::size_t> subset; // cap on training rows (idx mode)

    double split_fraction = 0.2;
    std::uint64_t split_seed = 0;

    std::vector<LayerSpec> architecture;
    TrainConfig train;

    WatermarkSpec watermark; // bits already materialized
    bool clean_baseline = true;

    std::vector<MethodEntry> methods;
    std::vector<AttackEntry> attacks;

    std::string output_dir;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

} // namespace detail

/// Parses and fully validates a config; throws before any compute on schema
/// problems (unknown methods, missing seeds, bad architectures).
inline ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig cfg;

    const json& d = j.at("dataset");
    const std::string source = d.at("source").get<std::string>();
    if (source == "synthetic") {
        cfg.synthetic = true;
        cfg.data_seed = d.at("seed").get<std::uint64_t>();
        cfg.test_seed = d.at("test_seed").get<std::uint64_t>();
        cfg.n_per_class = d.at("n_per_class").get<std::size_t>();
        cfg.test_fraction = d.at("test_fraction").get<double>();
        if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
            throw ConfigError("dataset.test_fraction must be in (0,1)");
        cfg.k = d.at("k").get<int>();
        cfg.feature_dim = d.at("feature_dim").get<std::size_t>();
    } else if (source == "idx") {
        cfg.synthetic = false;
        cfg.train_images = d.at("train_images").get<std::string>();
        cfg.train_labels = d.at("train_labels").get<std::string>();
        cfg.test_images = d.at("test_images").get<std::string>();
        cfg.test_labels = d.at("test_labels").get<std::string>();
        if (d.contains("subset")) cfg.subset = d.at("subset").get<std::size_t>();
    } else {
        throw ConfigError("dataset.source must be synthetic or idx");
    }

    cfg.split_fraction = j.at("split").at("fraction").get<double>();
    cfg.split_seed = j.at("split").at("seed").get<std::uint64_t>();
    if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0))
        throw ConfigError("split.fraction must be in (0,1)");

    cfg.architecture = arch_from_json(j.at("architecture"));
    cfg.train = train_config_from_json(j.at("train"));

    const json& w = j.at("watermark");
    WatermarkSpec spec;
    if (w.contains("bits_hex")) {
        spec.bits = hex_to_bits(w.at("bits_hex").get<std::string>(), w.at("n").get<std::size_t>());
    } else {
        spec.bits = random_bits(w.at("n").get<std::size_t>(), w.at("bits_seed").get<std::uint64_t>());
    }
    const json& c = w.at("carrier");
    spec.seed = c.at("seed").get<std::uint64_t>();
    spec.carrier_kind = carrier_kind_from_name(c.at("kind").get<std::string>());
    spec.height = c.at("height").get<std::size_t>();
    spec.width = c.at("width").get<std::size_t>();
    spec.channels = c.value("channels", 1);
    spec.k = cfg.synthetic ? cfg.k : c.value("k", 10);
    cfg.watermark = spec;

    cfg.clean_baseline = j.value("clean_baseline", true);

    for (const json& m : j.at("methods")) {
        MethodEntry e;
        const std::string name = m.at("method").get<std::string>();
        if (name == "cap") {
            e.config.method = EmbedMethod::cap;
            e.label = "P:CAP";
            e.slug = "cap";
        } else if (name == "ing") {
            e.config.method = EmbedMethod::ing;
            e.config.ingrain_lambda = m.at("lambda").get<double>();
            e.config.ingrain_temperature = m.value("temperature", 10.0);
            e.ingrainer_epochs = m.at("ingrainer_epochs").get<std::size_t>();
            e.ingrainer_seed = m.at("ingrainer_seed").get<std::uint64_t>();
            e.label = "P:ING(" + detail::format_double(e.config.ingrain_lambda) + ")";
            e.slug = "ing_l" + detail::format_double(e.config.ingrain_lambda);
        } else if (name == "sgn") {
            e.config.method = EmbedMethod::sgn;
            e.config.lambda_s = m.at("lambda_s").get<double>();
            e.label = "W:SGN";
            e.slug = "sgn";
        } else if (name == "cor") {
            e.config.method = EmbedMethod::cor;
            e.config.lambda_c = m.at("lambda_c").get<double>();
            e.label = "W:COR";
            e.slug = "cor";
        } else if (name == "sta") {
            e.config.method = EmbedMethod::sta;
            e.config.sta_key_seed = m.at("key_seed").get<std::uint64_t>();
            e.config.sta_layer = m.at("layer").get<std::size_t>();
            if (e.config.sta_layer >= cfg.architecture.size() ||
                !cfg.architecture[e.config.sta_layer].has_params())
                throw ConfigError("sta layer must index a parametered layer");
            e.label = "W:STA";
            e.slug = "sta";
        } else if (name == "lsb") {
            e.config.method = EmbedMethod::lsb;
            e.config.lsb_bits_per_param = m.value("bits_per_param", 1);
            e.label = "W:LSB";
            e.slug = "lsb";
        } else {
            throw ConfigError("unknown embed method: " + name);
        }
        cfg.methods.push_back(std::move(e));
    }
    if (cfg.methods.empty()) throw ConfigError("methods list is empty");

    for (const json& a : j.at("attacks")) {
        AttackEntry e;
        const std::string kind = a.at("kind").get<std::string>();
        if (kind == "distill") {
            e.config.kind = AttackKind::distill;
            e.config.distill_temperature = a.at("temperature").get<double>();
            e.config.distill_alpha = a.value("alpha", 0.5);
            e.config.student_arch = arch_from_json(a.at("student"));
            e.train = train_config_from_json(a.at("train"));
            e.has_train = true;
            e.label = "distill";
            e.params = "T=" + detail::format_double(e.config.distill_temperature) +
                       ";alpha=" + detail::format_double(e.config.distill_alpha);
        } else if (kind == "prune") {
            e.config.kind = AttackKind::prune;
            e.config.prune_rate = a.at("rate").get<double>();
            e.config.finetune_epochs = a.value("epochs", 25);
            e.train = train_config_from_json(a.at("train"));
            e.has_train = true;
            e.label = "prune";
            e.params = "rate=" + detail::format_double(e.config.prune_rate);
        } else if (kind == "round") {
            e.config.kind = AttackKind::round;
            e.config.round_digits = a.at("digits").get<int>();
            if (e.config.round_digits < 1 || e.config.round_digits > 6)
                throw ConfigError("round digits must be in 1..6");
            e.label = "round";
            e.params = "digits=" + std::to_string(e.config.round_digits);
        } else if (kind == "finetune") {
            e.config.kind = AttackKind::finetune;
            e.config.finetune_epochs = a.value("epochs", 25);
            e.train = train_config_from_json(a.at("train"));
            e.has_train = true;
            e.label = "finetune";
            e.params = "epochs=" + std::to_string(e.config.finetune_epochs);
        } else if (kind == "expand") {
            e.config.kind = AttackKind::expand;
            if (a.contains("ranks"))
                e.config.expand_ranks = a.at("ranks").get<std::vector<std::size_t>>();
            e.label = "expand";
            e.params = "ranks=";
            if (e.config.expand_ranks.empty()) e.params += "full";
            for (std::size_t i = 0; i < e.config.expand_ranks.size(); ++i)
                e.params += (i ? "/" : "") + std::to_string(e.config.expand_ranks[i]);
        } else {
            throw ConfigError("unknown attack kind: " + kind);
        }
        cfg.attacks.push_back(std::move(e));
    }

    cfg.output_dir = j.at("output_dir").get<std::string>();
    return cfg;
}

// ---------------------------------------------------------------------------
// Report assembly and the pipeline
// ---------------------------------------------------------------------------

/// Extracts the watermark with the method recorded in (config, spec) and
/// assembles one report row. c is k for prediction-space methods, 2 for
/// parameter-space methods.
inline ExperimentReport build_report(const Network<float>& net, const Dataset& test,
                                     const EmbedConfig& cfg, const WatermarkSpec& spec,
                                     const std::string& stage, const std::string& method_label,
                                     const std::string& attack, const std::string& attack_params,
                                     std::uint64_t seed) {
    ExperimentReport r;
    r.stage = stage;
    r.method = method_label;
    r.attack = attack;
    r.attack_params = attack_params;
    r.seed = seed;
    r.classification_accuracy = evaluate_accuracy(net, test.images, test.labels);

    if (cfg.method == EmbedMethod::cap || cfg.method == EmbedMethod::ing) {
        CarrierSet carrier = generate_carrier_set(spec);
        PredictionExtract ex = extract_prediction_wm(net, carrier);
        r.wm_accuracy_raw = ex.raw_label_accuracy;
        r.c = spec.k;
    } else {
        Bits extracted = cfg.method == EmbedMethod::lsb
                             ? extract_lsb(net, spec.n(), cfg.lsb_bits_per_param)
                             : extract_param_wm(cfg.method, net, spec.n(), cfg);
        r.wm_accuracy_raw = watermark_accuracy_raw(extracted, spec.bits);
        r.c = 2;
    }
    r.wm_accuracy_normalized = normalize_wm_accuracy(r.wm_accuracy_raw, r.c);
    return r;
}

struct RunResult {
    std::vector<ExperimentReport> reports;
    std::string output_dir;
};

/// End-to-end pipeline: load/split, optional clean baseline, embed with each
/// method, apply each attack, extract, and report. Writes model files,
/// sidecars, reports.csv and manifest.json under the output directory; fully
/// reproducible per config (reports.csv is byte-identical across reruns).
inline RunResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.output_dir);
    const std::string failed_marker = cfg.output_dir + "/FAILED";
    std::error_code ec;
    fs::remove(failed_marker, ec);

    json manifest;
    manifest["seeds"] = {{"train", cfg.train.seed},
                         {"split", cfg.split_seed},
                         {"carrier", cfg.watermark.seed}};
    manifest["stages"] = json::array();
    const auto t0 = std::chrono::steady_clock::now();
    auto stage_ms = [&t0] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - t0)
            .count();
    };
    std::string stage = "setup";

    try {
        // --- data ---
        Dataset full_train, test;
        if (cfg.synthetic) {
            // one generated pool, test carved off: train and test share the
            // class geometry exactly like a real dataset's split would
            Dataset pool =
                make_synthetic_dataset(cfg.data_seed, cfg.n_per_class, cfg.k, cfg.feature_dim);
            auto held_out = split_refining_set(pool, cfg.test_fraction, cfg.test_seed);
            full_train = std::move(held_out.first);
            test = std::move(held_out.second);
        } else {
            full_train = load_idx_dataset(cfg.train_images, cfg.train_labels);
            test = load_idx_dataset(cfg.test_images, cfg.test_labels);
            if (cfg.subset && *cfg.subset < full_train.size()) {
                std::vector<std::size_t> idx(*cfg.subset);
                for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                full_train = take_rows(full_train, idx);
            }
        }
        auto [train_set, refining] = split_refining_set(full_train, cfg.split_fraction, cfg.split_seed);
        manifest["stages"].push_back({{"stage", "data"}, {"ms", stage_ms()}});

        WatermarkSpec spec = cfg.watermark;
        spec.k = full_train.num_classes;
        CarrierSet carrier = generate_carrier_set(spec);

        RunResult result;
        result.output_dir = cfg.output_dir;

        // --- clean baseline ---
        std::optional<Network<float>> clean;
        if (cfg.clean_baseline) {
            stage = "clean";
            Network<float> net = build_network<float>(cfg.architecture, cfg.train.seed);
            train_loop(net, train_set.images, train_set.labels, cfg.train);
            for (const MethodEntry& m : cfg.methods) {
                EmbedConfig ecfg = m.config;
                result.reports.push_back(build_report(net, test, ecfg, spec, "clean", m.label, "",
                                                      "", cfg.train.seed));
            }
            save_network(net, cfg.output_dir + "/model_clean.nnwm");
            clean = std::move(net);
            manifest["stages"].push_back({{"stage", "clean"}, {"ms", stage_ms()}});
        }

        // --- embed + attack per method ---
        std::optional<Network<float>> cached_ingrainer;
        std::optional<std::pair<std::size_t, std::uint64_t>> ingrainer_key;

        for (const MethodEntry& m : cfg.methods) {
            stage = "embed:" + m.label;
            EmbeddedModel model;
            switch (m.config.method) {
                case EmbedMethod::cap:
                    model = train_pcap(train_set, carrier, cfg.architecture, cfg.train);
                    break;
                case EmbedMethod::ing: {
                    const std::pair<std::size_t, std::uint64_t> key{m.ingrainer_epochs,
                                                                    m.ingrainer_seed};
                    if (!cached_ingrainer || *ingrainer_key != key) {
                        TrainConfig icfg = cfg.train;
                        icfg.epochs = m.ingrainer_epochs;
                        icfg.seed = m.ingrainer_seed;
                        cached_ingrainer = train_ingrainer(carrier, cfg.architecture, icfg);
                        ingrainer_key = key;
                    }
                    model = train_ingrained_classifier(train_set, carrier, *cached_ingrainer,
                                                       cfg.architecture, cfg.train,
                                                       m.config.ingrain_lambda,
                                                       m.config.ingrain_temperature);
                    break;
                }
                case EmbedMethod::sgn:
                case EmbedMethod::cor:
                case EmbedMethod::sta: {
                    Network<float> net = build_network<float>(cfg.architecture, cfg.train.seed);
                    model = train_param_embedded(std::move(net), train_set, cfg.train, m.config,
                                                 spec.bits);
                    break;
                }
                case EmbedMethod::lsb: {
                    Network<float> host;
                    if (clean) {
                        host = *clean;
                    } else {
                        host = build_network<float>(cfg.architecture, cfg.train.seed);
                        train_loop(host, train_set.images, train_set.labels, cfg.train);
                    }
                    model.network = embed_lsb(host, spec.bits, m.config.lsb_bits_per_param);
                    break;
                }
            }
            model.spec = spec;
            model.config = m.config;

            save_network(model.network, cfg.output_dir + "/model_" + m.slug + ".nnwm");
            save_json(sidecar_to_json(model), cfg.output_dir + "/sidecar_" + m.slug + ".json");
            result.reports.push_back(build_report(model.network, test, model.config, spec, "embed",
                                                  m.label, "", "", cfg.train.seed));
            manifest["stages"].push_back({{"stage", stage}, {"ms", stage_ms()}});

            for (const AttackEntry& a : cfg.attacks) {
                stage = "attack:" + m.label + ":" + a.label;
                Network<float> attacked;
                std::string params = a.params;
                switch (a.config.kind) {
                    case AttackKind::distill:
                        attacked = distill(model.network, refining, a.config, a.train);
                        break;
                    case AttackKind::prune:
                        attacked = prune_finetune(model.network, refining, a.config, a.train);
                        break;
                    case AttackKind::round:
                        attacked = round_params(model.network, a.config.round_digits);
                        break;
                    case AttackKind::finetune:
                        attacked = fine_tune(model.network, refining, a.config.finetune_epochs,
                                             a.train);
                        break;
                    case AttackKind::expand: {
                        attacked = lowrank_expand(model.network, a.config.expand_ranks);
                        const std::vector<std::size_t> in_shape(test.images.shape.begin() + 1,
                                                                test.images.shape.end());
                        const std::size_t before = network_multiply_count(model.network, in_shape);
                        const std::size_t after = network_multiply_count(attacked, in_shape);
                        char ratio[32];
                        std::snprintf(ratio, sizeof(ratio), "%.3f",
                                      static_cast<double>(before) / static_cast<double>(after));
                        params += ";mult_ratio=" + std::string(ratio);
                        break;
                    }
                }
                save_network(attacked, cfg.output_dir + "/model_" + m.slug + "_" + a.label + ".nnwm");
                result.reports.push_back(build_report(attacked, test, model.config, spec, "attack",
                                                      m.label, a.label, params,
                                                      a.has_train ? a.train.seed : cfg.train.seed));
                manifest["stages"].push_back({{"stage", stage}, {"ms", stage_ms()}});
            }
        }

        stage = "report";
        append_reports_csv(cfg.output_dir + "/reports.csv", result.reports, true);
        json jr = json::array();
        for (const ExperimentReport& r : result.reports) jr.push_back(report_to_json(r));
        save_json(jr, cfg.output_dir + "/reports.json");
        manifest["total_ms"] = stage_ms();
        save_json(manifest, cfg.output_dir + "/manifest.json");
        return result;
    } catch (const std::exception& e) {
        std::ofstream f(failed_marker, std::ios::trunc);
        f << "stage: " << stage << "\nerror: " << e.what() << "\n";
        throw ConfigError("stage '" + stage + "' failed: " + e.what());
    }
}

} // namespace nnwm
