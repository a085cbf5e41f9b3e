#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "nnwm/experiment.hpp"

using namespace nnwm;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("nnwm_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

json tiny_config(const std::string& outdir) {
    json j;
    j["output_dir"] = outdir;
    j["dataset"] = {{"source", "synthetic"}, {"seed", 11},      {"test_seed", 12},
                    {"n_per_class", 80},     {"test_fraction", 0.25}, {"k", 4},
                    {"feature_dim", 20}};
    j["split"] = {{"fraction", 0.2}, {"seed", 13}};
    j["architecture"] = json::array({json{{"kind", "dense"}, {"in", 20}, {"out", 48}},
                                     json{{"kind", "relu"}},
                                     json{{"kind", "dense"}, {"in", 48}, {"out", 4}}});
    j["train"] = {{"epochs", 900},
                  {"batch_size", 32},
                  {"seed", 14},
                  {"optimizer",
                   {{"kind", "adadelta"}, {"learning_rate", 1.0}, {"rho", 0.95}, {"epsilon", 1e-8}}}};
    j["watermark"] = {{"n", 20},
                      {"bits_seed", 15},
                      {"carrier",
                       {{"kind", "random_walk"}, {"seed", 16}, {"height", 5}, {"width", 4}}}};
    j["clean_baseline"] = true;
    j["methods"] = json::array(
        {json{{"method", "cap"}},
         json{{"method", "ing"}, {"lambda", 1.0}, {"temperature", 10.0},
              {"ingrainer_epochs", 1500}, {"ingrainer_seed", 17}},
         json{{"method", "lsb"}, {"bits_per_param", 1}}});
    j["attacks"] = json::array(
        {json{{"kind", "round"}, {"digits", 2}},
         json{{"kind", "finetune"}, {"epochs", 5},
              {"train",
               {{"epochs", 5},
                {"batch_size", 16},
                {"seed", 18},
                {"optimizer", {{"kind", "adadelta"}, {"learning_rate", 1.0}}}}}}});
    return j;
}

} // namespace

TEST_CASE("run_experiment produces the full artifact set") {
    TempDir tmp;
    ExperimentConfig cfg = parse_experiment_config(tiny_config(tmp.file("out")));
    RunResult res = run_experiment(cfg);

    // 3 clean rows + 3 methods x (1 embed + 2 attacks)
    REQUIRE(res.reports.size() == 3 + 3 * 3);

    REQUIRE(fs::exists(tmp.file("out/reports.csv")));
    REQUIRE(fs::exists(tmp.file("out/reports.json")));
    REQUIRE(fs::exists(tmp.file("out/manifest.json")));
    REQUIRE(fs::exists(tmp.file("out/model_clean.nnwm")));
    for (const char* slug : {"cap", "ing_l1", "lsb"}) {
        REQUIRE(fs::exists(tmp.file(std::string("out/model_") + slug + ".nnwm")));
        REQUIRE(fs::exists(tmp.file(std::string("out/sidecar_") + slug + ".json")));
        REQUIRE(fs::exists(tmp.file(std::string("out/model_") + slug + "_round.nnwm")));
        REQUIRE(fs::exists(tmp.file(std::string("out/model_") + slug + "_finetune.nnwm")));
    }
    REQUIRE(!fs::exists(tmp.file("out/FAILED")));

    SECTION("clean rows sit near chance, embed rows at full watermark accuracy") {
        // only 20 bits / 10 carriers here, so the chance bound is loose; the
        // acceptance suite pins it down at full watermark sizes
        for (const ExperimentReport& r : res.reports) {
            if (r.stage == "clean") REQUIRE(r.wm_accuracy_normalized <= 0.5);
            if (r.stage == "embed") REQUIRE(r.wm_accuracy_raw == 1.0);
        }
    }

    SECTION("saved models and sidecars reproduce the reported extraction") {
        Network<float> net = load_network(tmp.file("out/model_cap.nnwm"));
        auto [ecfg, spec] = sidecar_from_json(load_json(tmp.file("out/sidecar_cap.json")));
        CarrierSet carrier = generate_carrier_set(spec);
        PredictionExtract ex = extract_prediction_wm(net, carrier);
        for (const ExperimentReport& r : res.reports)
            if (r.stage == "embed" && r.method == "P:CAP")
                REQUIRE(ex.raw_label_accuracy == r.wm_accuracy_raw);
    }

    SECTION("reruns are byte-identical in reports.csv") {
        TempDir tmp2;
        ExperimentConfig cfg2 = parse_experiment_config(tiny_config(tmp2.file("out")));
        run_experiment(cfg2);
        REQUIRE(read_file(tmp2.file("out/reports.csv")) == read_file(tmp.file("out/reports.csv")));
    }
}

TEST_CASE("config validation fails before any compute") {
    TempDir tmp;

    SECTION("unknown method") {
        json j = tiny_config(tmp.file("out"));
        j["methods"].push_back(json{{"method", "magic"}});
        REQUIRE_THROWS_AS(parse_experiment_config(j), ConfigError);
        REQUIRE(!fs::exists(tmp.file("out")));
    }
    SECTION("unknown attack") {
        json j = tiny_config(tmp.file("out"));
        j["attacks"].push_back(json{{"kind", "teleport"}});
        REQUIRE_THROWS_AS(parse_experiment_config(j), ConfigError);
    }
    SECTION("missing seed") {
        json j = tiny_config(tmp.file("out"));
        j["train"].erase("seed");
        REQUIRE_THROWS_AS(parse_experiment_config(j), ConfigError);
    }
    SECTION("bad split fraction") {
        json j = tiny_config(tmp.file("out"));
        j["split"]["fraction"] = 1.5;
        REQUIRE_THROWS_AS(parse_experiment_config(j), ConfigError);
    }
    SECTION("bad architecture") {
        json j = tiny_config(tmp.file("out"));
        j["architecture"] = json::array({json{{"kind", "dense"}, {"in", 20}, {"out", 48}},
                                         json{{"kind", "dense"}, {"in", 3}, {"out", 4}}});
        REQUIRE_THROWS_AS(parse_experiment_config(j), ConfigError);
    }
}

TEST_CASE("a failing stage leaves a FAILED marker and partial artifacts") {
    TempDir tmp;
    json j = tiny_config(tmp.file("out"));
    j["train"]["batch_size"] = 100000; // exceeds the dataset: train_loop rejects it
    ExperimentConfig cfg = parse_experiment_config(j);
    REQUIRE_THROWS_AS(run_experiment(cfg), ConfigError);
    REQUIRE(fs::exists(tmp.file("out/FAILED")));
    const std::string marker = read_file(tmp.file("out/FAILED"));
    REQUIRE(marker.find("stage:") != std::string::npos);
}
