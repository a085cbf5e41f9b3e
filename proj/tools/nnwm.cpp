// Command-line front end: config-driven experiment pipelines plus individual
// stages (data generation, training, embedding, attacks, extraction, eval).

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nnwm/nnwm.hpp"

namespace {

using nnwm::json;

nnwm::json parse_json_arg(const std::string& arg) {
    if (!arg.empty() && (arg.front() == '[' || arg.front() == '{')) return nnwm::json::parse(arg);
    return nnwm::load_json(arg);
}

struct DataArgs {
    std::string images, labels;
    std::size_t subset = 0;

    void attach(CLI::App* cmd, const std::string& prefix = "") {
        cmd->add_option("--" + prefix + "images", images, "IDX image file")->required();
        cmd->add_option("--" + prefix + "labels", labels, "IDX label file")->required();
    }

    nnwm::Dataset load() const {
        nnwm::Dataset ds = nnwm::load_idx_dataset(images, labels);
        if (subset > 0 && subset < ds.size()) {
            std::vector<std::size_t> idx(subset);
            for (std::size_t i = 0; i < subset; ++i) idx[i] = i;
            ds = nnwm::take_rows(ds, idx);
        }
        return ds;
    }
};

struct TrainArgs {
    std::size_t epochs = 50;
    std::size_t batch = 128;
    std::string optimizer = "adadelta";
    double lr = 0.1;
    double momentum = 0.9;
    double rho = 0.95;
    double epsilon = 1e-8;
    double lr_decay = 1.0;
    std::size_t decay_interval = 0;
    std::uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch", batch, "mini-batch size");
        cmd->add_option("--optimizer", optimizer, "sgd|momentum|adadelta");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--momentum", momentum, "momentum coefficient");
        cmd->add_option("--rho", rho, "adadelta rho");
        cmd->add_option("--epsilon", epsilon, "adadelta epsilon");
        cmd->add_option("--lr-decay", lr_decay, "multiplicative lr decay");
        cmd->add_option("--decay-interval", decay_interval, "epochs between lr decays");
        cmd->add_option("--seed", seed, "run seed")->required();
    }

    nnwm::TrainConfig to_config() const {
        nnwm::TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.seed = seed;
        if (optimizer == "sgd") cfg.optimizer.kind = nnwm::OptimizerKind::sgd;
        else if (optimizer == "momentum") cfg.optimizer.kind = nnwm::OptimizerKind::momentum;
        else if (optimizer == "adadelta") cfg.optimizer.kind = nnwm::OptimizerKind::adadelta;
        else throw nnwm::ConfigError("unknown optimizer: " + optimizer);
        cfg.optimizer.learning_rate = lr;
        cfg.optimizer.momentum = momentum;
        cfg.optimizer.rho = rho;
        cfg.optimizer.epsilon = epsilon;
        cfg.optimizer.lr_decay = lr_decay;
        cfg.optimizer.decay_interval_epochs = decay_interval;
        cfg.optimizer.validate();
        return cfg;
    }
};

struct WatermarkArgs {
    std::size_t n = 0;
    std::string bits_hex;
    std::uint64_t bits_seed = 0;
    bool has_bits_seed = false;
    std::string carrier_kind = "random_walk";
    std::uint64_t carrier_seed = 0;
    std::size_t height = 28, width = 28, channels = 1;
    int k = 10;

    void attach(CLI::App* cmd) {
        cmd->add_option("--wm-n", n, "watermark bit count")->required();
        cmd->add_option("--wm-bits-hex", bits_hex, "explicit watermark bits (hex, MSB first)");
        cmd->add_option("--wm-bits-seed", bits_seed, "seed for random watermark bits")
            ->each([this](const std::string&) { has_bits_seed = true; });
        cmd->add_option("--carrier-kind", carrier_kind,
                        "random_walk|white_noise|uniform_noise|one_hot");
        cmd->add_option("--carrier-seed", carrier_seed, "carrier generation seed");
        cmd->add_option("--carrier-height", height, "carrier image height");
        cmd->add_option("--carrier-width", width, "carrier image width");
        cmd->add_option("--carrier-channels", channels, "carrier image channels");
        cmd->add_option("--k", k, "class count");
    }

    nnwm::WatermarkSpec to_spec() const {
        nnwm::WatermarkSpec spec;
        if (!bits_hex.empty()) spec.bits = nnwm::hex_to_bits(bits_hex, n);
        else if (has_bits_seed) spec.bits = nnwm::random_bits(n, bits_seed);
        else throw nnwm::ConfigError("provide --wm-bits-hex or --wm-bits-seed");
        spec.seed = carrier_seed;
        spec.carrier_kind = nnwm::carrier_kind_from_name(carrier_kind);
        spec.k = k;
        spec.height = height;
        spec.width = width;
        spec.channels = channels;
        return spec;
    }
};

int cmd_gen_data(std::uint64_t seed, std::size_t n_per_class, int k, std::size_t h, std::size_t w,
                 const std::string& images, const std::string& labels) {
    nnwm::Dataset ds = nnwm::make_synthetic_dataset(seed, n_per_class, k, h * w);
    ds = nnwm::reshape_dataset(std::move(ds), h, w, 1);
    nnwm::save_idx_dataset(ds, images, labels);
    std::printf("wrote %zu images (%zux%zu, %d classes) to %s\n", ds.size(), h, w, k,
                images.c_str());
    return 0;
}

void print_report_table(const std::string& csv_path) {
    std::ifstream f(csv_path);
    if (!f) throw nnwm::ConfigError("cannot open " + csv_path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (true) {
            const std::size_t c = line.find(',', pos);
            cells.push_back(line.substr(pos, c - pos));
            if (c == std::string::npos) break;
            pos = c + 1;
        }
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) return;
    std::vector<std::size_t> widths;
    for (const auto& r : rows) {
        if (widths.size() < r.size()) widths.resize(r.size(), 0);
        for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], r[i].size());
    }
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i)
            std::printf("%-*s  ", static_cast<int>(widths[i]), r[i].c_str());
        std::printf("\n");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"neural-network watermark embedding, attacks and robustness reports"};
    app.require_subcommand(1);

    // --- run ---
    std::string run_config, run_outdir;
    CLI::App* run = app.add_subcommand("run", "run a full experiment from a JSON config");
    run->add_option("--config", run_config, "experiment config JSON")->required();
    run->add_option("--output-dir", run_outdir, "override the config's output_dir");

    // --- gen-data ---
    std::uint64_t gd_seed = 0;
    std::size_t gd_npc = 100, gd_h = 28, gd_w = 28;
    int gd_k = 10;
    std::string gd_images, gd_labels;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset as IDX files");
    gen->add_option("--seed", gd_seed)->required();
    gen->add_option("--n-per-class", gd_npc);
    gen->add_option("--k", gd_k);
    gen->add_option("--height", gd_h);
    gen->add_option("--width", gd_w);
    gen->add_option("--images", gd_images, "output IDX image file")->required();
    gen->add_option("--labels", gd_labels, "output IDX label file")->required();

    // --- train ---
    DataArgs tr_data;
    TrainArgs tr_train;
    std::string tr_arch, tr_out;
    CLI::App* train = app.add_subcommand("train", "train a clean classifier");
    tr_data.attach(train);
    train->add_option("--subset", tr_data.subset, "use only the first N rows");
    train->add_option("--arch", tr_arch, "architecture JSON (inline or file)")->required();
    tr_train.attach(train);
    train->add_option("--out", tr_out, "output model file")->required();

    // --- embed ---
    DataArgs em_data;
    TrainArgs em_train;
    WatermarkArgs em_wm;
    std::string em_method, em_arch, em_out, em_sidecar, em_model_in;
    double em_lambda_s = 1.0, em_lambda_c = 1.0, em_lambda = 2.0, em_temp = 10.0;
    std::uint64_t em_sta_key = 0, em_ingrainer_seed = 0;
    std::size_t em_sta_layer = 0, em_ingrainer_epochs = 1000;
    int em_bpp = 1;
    CLI::App* embed = app.add_subcommand("embed", "embed a watermark while (or after) training");
    embed->add_option("--method", em_method, "lsb|sgn|cor|sta|cap|ing")->required();
    em_data.attach(embed);
    embed->add_option("--subset", em_data.subset, "use only the first N rows");
    embed->add_option("--arch", em_arch, "architecture JSON (inline or file)");
    em_train.attach(embed);
    em_wm.attach(embed);
    embed->add_option("--lambda-s", em_lambda_s, "sign penalty weight");
    embed->add_option("--lambda-c", em_lambda_c, "correlation penalty weight");
    embed->add_option("--sta-key-seed", em_sta_key, "sta secret key seed");
    embed->add_option("--sta-layer", em_sta_layer, "sta host layer index");
    embed->add_option("--lambda", em_lambda, "ingrain coefficient");
    embed->add_option("--temperature", em_temp, "ingrain temperature");
    embed->add_option("--ingrainer-epochs", em_ingrainer_epochs, "ingrainer training epochs");
    embed->add_option("--ingrainer-seed", em_ingrainer_seed, "ingrainer init/shuffle seed");
    embed->add_option("--bits-per-param", em_bpp, "lsb payload bits per parameter");
    embed->add_option("--model-in", em_model_in, "host model for lsb embedding");
    embed->add_option("--out", em_out, "output model file")->required();
    embed->add_option("--sidecar", em_sidecar, "output sidecar JSON")->required();

    // --- attack ---
    std::string at_model, at_kind, at_out, at_student;
    DataArgs at_data;
    TrainArgs at_train;
    double at_temp = 10.0, at_alpha = 0.5, at_rate = 0.4;
    std::size_t at_epochs = 25;
    int at_digits = 2;
    std::vector<std::size_t> at_ranks;
    CLI::App* attack = app.add_subcommand("attack", "apply a removal attack to a model");
    attack->add_option("--model", at_model, "input model file")->required();
    attack->add_option("--kind", at_kind, "distill|prune|round|finetune|expand")->required();
    attack->add_option("--images", at_data.images, "refining IDX image file");
    attack->add_option("--labels", at_data.labels, "refining IDX label file");
    attack->add_option("--subset", at_data.subset, "use only the first N rows");
    at_train.attach(attack);
    attack->add_option("--temperature", at_temp, "distillation temperature");
    attack->add_option("--alpha", at_alpha, "distillation soft-loss share");
    attack->add_option("--student", at_student, "student architecture JSON (inline or file)");
    attack->add_option("--rate", at_rate, "prune rate");
    attack->add_option("--attack-epochs", at_epochs, "fine-tune epochs");
    attack->add_option("--digits", at_digits, "rounding digits");
    attack->add_option("--ranks", at_ranks, "expansion rank per conv layer");
    attack->add_option("--out", at_out, "output model file")->required();

    // --- extract ---
    std::string ex_model, ex_sidecar;
    CLI::App* extract = app.add_subcommand("extract", "extract a watermark and score it");
    extract->add_option("--model", ex_model)->required();
    extract->add_option("--sidecar", ex_sidecar)->required();

    // --- eval ---
    std::string ev_model;
    DataArgs ev_data;
    CLI::App* eval = app.add_subcommand("eval", "classification accuracy on a test set");
    eval->add_option("--model", ev_model)->required();
    ev_data.attach(eval);

    // --- report ---
    std::string rp_csv;
    CLI::App* report = app.add_subcommand("report", "print reports.csv as an aligned table");
    report->add_option("--csv", rp_csv)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            json j = nnwm::load_json(run_config);
            if (!run_outdir.empty()) j["output_dir"] = run_outdir;
            nnwm::ExperimentConfig cfg = nnwm::parse_experiment_config(j);
            nnwm::RunResult res = nnwm::run_experiment(cfg);
            for (const nnwm::ExperimentReport& r : res.reports)
                std::printf("%s\n", nnwm::to_csv_row(r).c_str());
            std::printf("artifacts in %s\n", res.output_dir.c_str());
        } else if (gen->parsed()) {
            return cmd_gen_data(gd_seed, gd_npc, gd_k, gd_h, gd_w, gd_images, gd_labels);
        } else if (train->parsed()) {
            nnwm::Dataset ds = tr_data.load();
            std::vector<nnwm::LayerSpec> arch = nnwm::arch_from_json(parse_json_arg(tr_arch));
            nnwm::TrainConfig cfg = tr_train.to_config();
            nnwm::Network<float> net = nnwm::build_network<float>(arch, cfg.seed);
            std::vector<nnwm::EpochStats> hist =
                nnwm::train_loop(net, ds.images, ds.labels, cfg);
            nnwm::save_network(net, tr_out);
            std::printf("final train loss %.4f accuracy %.4f; model saved to %s\n",
                        hist.empty() ? 0.0 : hist.back().loss,
                        hist.empty() ? 0.0 : hist.back().train_accuracy, tr_out.c_str());
        } else if (embed->parsed()) {
            nnwm::Dataset ds = em_data.load();
            em_wm.k = ds.num_classes;
            nnwm::WatermarkSpec spec = em_wm.to_spec();
            nnwm::TrainConfig cfg = em_train.to_config();
            nnwm::EmbeddedModel model;
            if (em_method == "lsb") {
                if (em_model_in.empty())
                    throw nnwm::ConfigError("lsb embedding needs --model-in (post-training)");
                model.network = nnwm::embed_lsb(nnwm::load_network(em_model_in), spec.bits, em_bpp);
                model.spec = spec;
                model.config.method = nnwm::EmbedMethod::lsb;
                model.config.lsb_bits_per_param = em_bpp;
            } else if (em_method == "cap" || em_method == "ing") {
                std::vector<nnwm::LayerSpec> arch = nnwm::arch_from_json(parse_json_arg(em_arch));
                nnwm::CarrierSet carrier = nnwm::generate_carrier_set(spec);
                if (em_method == "cap") {
                    model = nnwm::train_pcap(ds, carrier, arch, cfg);
                } else {
                    nnwm::TrainConfig icfg = cfg;
                    icfg.epochs = em_ingrainer_epochs;
                    icfg.seed = em_ingrainer_seed;
                    nnwm::Network<float> g = nnwm::train_ingrainer(carrier, arch, icfg);
                    model = nnwm::train_ingrained_classifier(ds, carrier, g, arch, cfg, em_lambda,
                                                             em_temp);
                }
            } else if (em_method == "sgn" || em_method == "cor" || em_method == "sta") {
                std::vector<nnwm::LayerSpec> arch = nnwm::arch_from_json(parse_json_arg(em_arch));
                nnwm::EmbedConfig ecfg;
                if (em_method == "sgn") {
                    ecfg.method = nnwm::EmbedMethod::sgn;
                    ecfg.lambda_s = em_lambda_s;
                } else if (em_method == "cor") {
                    ecfg.method = nnwm::EmbedMethod::cor;
                    ecfg.lambda_c = em_lambda_c;
                } else {
                    ecfg.method = nnwm::EmbedMethod::sta;
                    ecfg.sta_key_seed = em_sta_key;
                    ecfg.sta_layer = em_sta_layer;
                }
                nnwm::Network<float> net = nnwm::build_network<float>(arch, cfg.seed);
                model = nnwm::train_param_embedded(std::move(net), ds, cfg, ecfg, spec.bits);
                model.spec = spec;
            } else {
                throw nnwm::ConfigError("unknown embed method: " + em_method);
            }
            nnwm::save_network(model.network, em_out);
            nnwm::save_json(nnwm::sidecar_to_json(model), em_sidecar);
            std::printf("embedded %zu bits via %s; model %s, sidecar %s\n", spec.n(),
                        em_method.c_str(), em_out.c_str(), em_sidecar.c_str());
        } else if (attack->parsed()) {
            nnwm::Network<float> net = nnwm::load_network(at_model);
            nnwm::Network<float> out;
            nnwm::AttackConfig acfg;
            if (at_kind == "round") {
                out = nnwm::round_params(net, at_digits);
            } else if (at_kind == "expand") {
                out = nnwm::lowrank_expand(net, at_ranks);
            } else {
                nnwm::Dataset refining = at_data.load();
                nnwm::TrainConfig cfg = at_train.to_config();
                if (at_kind == "distill") {
                    acfg.kind = nnwm::AttackKind::distill;
                    acfg.distill_temperature = at_temp;
                    acfg.distill_alpha = at_alpha;
                    acfg.student_arch = nnwm::arch_from_json(parse_json_arg(at_student));
                    out = nnwm::distill(net, refining, acfg, cfg);
                } else if (at_kind == "prune") {
                    acfg.kind = nnwm::AttackKind::prune;
                    acfg.prune_rate = at_rate;
                    acfg.finetune_epochs = at_epochs;
                    out = nnwm::prune_finetune(net, refining, acfg, cfg);
                } else if (at_kind == "finetune") {
                    out = nnwm::fine_tune(net, refining, at_epochs, cfg);
                } else {
                    throw nnwm::ConfigError("unknown attack kind: " + at_kind);
                }
            }
            nnwm::save_network(out, at_out);
            std::printf("%s attack applied; model saved to %s\n", at_kind.c_str(), at_out.c_str());
        } else if (extract->parsed()) {
            nnwm::Network<float> net = nnwm::load_network(ex_model);
            auto [ecfg, spec] = nnwm::sidecar_from_json(nnwm::load_json(ex_sidecar));
            double raw;
            int c;
            nnwm::Bits bits;
            if (ecfg.method == nnwm::EmbedMethod::cap || ecfg.method == nnwm::EmbedMethod::ing) {
                nnwm::CarrierSet carrier = nnwm::generate_carrier_set(spec);
                nnwm::PredictionExtract ex = nnwm::extract_prediction_wm(net, carrier);
                raw = ex.raw_label_accuracy;
                bits = ex.bits;
                c = spec.k;
            } else {
                bits = ecfg.method == nnwm::EmbedMethod::lsb
                           ? nnwm::extract_lsb(net, spec.n(), ecfg.lsb_bits_per_param)
                           : nnwm::extract_param_wm(ecfg.method, net, spec.n(), ecfg);
                raw = nnwm::watermark_accuracy_raw(bits, spec.bits);
                c = 2;
            }
            std::printf("bits: %s\n", nnwm::bits_to_hex(bits).c_str());
            std::printf("raw accuracy: %.6f\nnormalized accuracy: %.6f\n", raw,
                        nnwm::normalize_wm_accuracy(raw, c));
        } else if (eval->parsed()) {
            nnwm::Network<float> net = nnwm::load_network(ev_model);
            nnwm::Dataset ds = ev_data.load();
            std::printf("accuracy: %.6f\n", nnwm::evaluate_accuracy(net, ds.images, ds.labels));
        } else if (report->parsed()) {
            print_report_table(rp_csv);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
