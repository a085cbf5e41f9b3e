#include <catch2/catch_amalgamated.hpp>

#include "nnwm/dataset.hpp"
#include "nnwm/engine.hpp"
#include "nnwm/network.hpp"
#include "nnwm/optimizer.hpp"
#include "nnwm/serialize.hpp"
#include "nnwm/train.hpp"

using namespace nnwm;

namespace {

/// dense(k,k) with identity weights: logits equal the inputs.
Network<float> identity_net(std::size_t k) {
    Network<float> net = build_network<float>({LayerSpec::dense_layer(k, k)}, 0);
    std::fill(net.weights[0].data.begin(), net.weights[0].data.end(), 0.0f);
    for (std::size_t i = 0; i < k; ++i) net.weights[0].data[i * k + i] = 1.0f;
    return net;
}

} // namespace

TEST_CASE("build_network is deterministic per seed") {
    Network<float> a = build_network<float>({LayerSpec::dense_layer(4, 2)}, 7);
    Network<float> b = build_network<float>({LayerSpec::dense_layer(4, 2)}, 7);
    REQUIRE(a.flatten_params() == b.flatten_params());
    Network<float> c = build_network<float>({LayerSpec::dense_layer(4, 2)}, 8);
    REQUIRE(a.flatten_params() != c.flatten_params());
}

TEST_CASE("paper MLP parameter count") {
    const std::vector<LayerSpec> mlp = {
        LayerSpec::dense_layer(784, 1200), LayerSpec::relu_layer(), LayerSpec::dropout_layer(0.5f),
        LayerSpec::dense_layer(1200, 1200), LayerSpec::relu_layer(), LayerSpec::dropout_layer(0.5f),
        LayerSpec::dense_layer(1200, 10)};
    Network<float> net = build_network<float>(mlp, 1);
    REQUIRE(net.param_count() == 2395210);
}

TEST_CASE("incompatible adjacent dense layers are rejected") {
    REQUIRE_THROWS_AS(
        build_network<float>({LayerSpec::dense_layer(4, 2), LayerSpec::dense_layer(3, 1)}, 0),
        NetworkError);
}

TEST_CASE("conv after dense is rejected") {
    REQUIRE_THROWS_AS(
        build_network<float>({LayerSpec::dense_layer(4, 2), LayerSpec::conv2d_layer(1, 2)}, 0),
        NetworkError);
}

TEST_CASE("canonical flatten/unflatten round trip") {
    Network<float> net = build_network<float>(
        {LayerSpec::dense_layer(5, 4), LayerSpec::relu_layer(), LayerSpec::dense_layer(4, 3)}, 11);
    const std::vector<float> flat = net.flatten_params();
    REQUIRE(flat.size() == net.param_count());
    Network<float> copy = net;
    for (float& v : copy.weights[0].data) v = -1.0f;
    copy.unflatten_params(flat);
    REQUIRE(copy.flatten_params() == flat);
}

TEST_CASE("softmax examples") {
    Network<float> net = identity_net(3);
    Tensor<float> batch({1, 3}, {0.0f, 0.0f, 0.0f});
    for (double t : {0.5, 1.0, 7.0}) {
        ForwardConfig cfg;
        cfg.temperature = t;
        Tensor<float> p = forward(net, batch, cfg);
        for (int j = 0; j < 3; ++j) REQUIRE(p.data[j] == Catch::Approx(1.0 / 3).margin(1e-6));
    }

    Network<float> net2 = identity_net(2);
    Tensor<float> b2({1, 2}, {2.0f, 0.0f});
    Tensor<float> p1 = forward(net2, b2, ForwardConfig{});
    REQUIRE(p1.data[0] == Catch::Approx(0.8808).margin(1e-3));
    REQUIRE(p1.data[1] == Catch::Approx(0.1192).margin(1e-3));

    ForwardConfig hot;
    hot.temperature = 1e6;
    Tensor<float> p2 = forward(net2, b2, hot);
    REQUIRE(p2.data[0] == Catch::Approx(0.5).margin(1e-3));
    REQUIRE(p2.data[1] == Catch::Approx(0.5).margin(1e-3));
}

TEST_CASE("softmax rows sum to 1 and argmax is temperature-invariant") {
    SplitMix64 rng(5);
    Tensor<float> logits({16, 10});
    for (float& v : logits.data) v = static_cast<float>(rng.next_uniform(-5.0, 5.0));
    std::vector<std::size_t> argmax_ref;
    for (double t : {0.5, 1.0, 5.0, 10.0, 15.0}) {
        Tensor<float> p = softmax_rows(logits, t);
        for (std::size_t r = 0; r < 16; ++r) {
            double sum = 0.0;
            std::size_t arg = 0;
            for (std::size_t j = 0; j < 10; ++j) {
                sum += p.row(r)[j];
                if (p.row(r)[j] > p.row(r)[arg]) arg = j;
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-5));
            if (t == 0.5) argmax_ref.push_back(arg);
            else REQUIRE(arg == argmax_ref[r]);
        }
    }
}

TEST_CASE("optimizer hand-iterated examples") {
    const std::vector<LayerSpec> spec = {LayerSpec::dense_layer(1, 1)};

    SECTION("sgd definitional step") {
        Network<float> net = build_network<float>(spec, 0);
        net.weights[0].data[0] = 1.0f;
        net.biases[0].data[0] = 0.0f;
        ParamGrads<float> g = ParamGrads<float>::zeros_like(net);
        g.weights[0].data[0] = 2.0f;
        OptimizerState<float> st;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::sgd;
        cfg.learning_rate = 0.1;
        optimizer_step(st, net, g, cfg, 0.1);
        REQUIRE(net.weights[0].data[0] == Catch::Approx(0.8).margin(1e-7));
    }

    SECTION("momentum recurrence over two steps") {
        Network<float> net = build_network<float>(spec, 0);
        net.weights[0].data[0] = 0.0f;
        ParamGrads<float> g = ParamGrads<float>::zeros_like(net);
        g.weights[0].data[0] = 1.0f;
        OptimizerState<float> st;
        OptimizerConfig cfg;
        cfg.kind = OptimizerKind::momentum;
        cfg.learning_rate = 0.1;
        cfg.momentum = 0.9;
        optimizer_step(st, net, g, cfg, 0.1);
        REQUIRE(net.weights[0].data[0] == Catch::Approx(-0.1).margin(1e-7));
        optimizer_step(st, net, g, cfg, 0.1);
        REQUIRE(st.slot1.weights[0].data[0] == Catch::Approx(1.9).margin(1e-6));
        REQUIRE(net.weights[0].data[0] == Catch::Approx(-0.29).margin(1e-6));
    }

    SECTION("zero gradient with zero state is a fixed point") {
        for (OptimizerKind kind :
             {OptimizerKind::sgd, OptimizerKind::momentum, OptimizerKind::adadelta}) {
            Network<float> net = build_network<float>(spec, 3);
            const std::vector<float> before = net.flatten_params();
            ParamGrads<float> g = ParamGrads<float>::zeros_like(net);
            OptimizerState<float> st;
            OptimizerConfig cfg;
            cfg.kind = kind;
            cfg.momentum = 0.9;
            optimizer_step(st, net, g, cfg, 0.1);
            REQUIRE(net.flatten_params() == before);
        }
    }
}

TEST_CASE("learning-rate decay schedule") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.lr_decay = 0.95;
    cfg.decay_interval_epochs = 10;
    REQUIRE(cfg.effective_lr(0) == Catch::Approx(0.01));
    REQUIRE(cfg.effective_lr(9) == Catch::Approx(0.01));
    REQUIRE(cfg.effective_lr(10) == Catch::Approx(0.0095));
    REQUIRE(cfg.effective_lr(25) == Catch::Approx(0.01 * 0.95 * 0.95));
}

TEST_CASE("training on separable blobs reaches high accuracy") {
    Dataset ds = make_synthetic_dataset(1, 50, 2, 2);
    Network<float> net = build_network<float>({LayerSpec::dense_layer(2, 2)}, 1);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 16;
    cfg.seed = 1;
    cfg.optimizer.kind = OptimizerKind::sgd;
    cfg.optimizer.learning_rate = 0.5;
    std::vector<EpochStats> hist = train_loop(net, ds.images, ds.labels, cfg);
    REQUIRE(hist.size() == 50);
    REQUIRE(evaluate_accuracy(net, ds.images, ds.labels) >= 0.99);
}

TEST_CASE("zero epochs is a no-op and equal seeds reproduce bit-identically") {
    Dataset ds = make_synthetic_dataset(2, 30, 3, 4);
    const std::vector<LayerSpec> arch = {LayerSpec::dense_layer(4, 8), LayerSpec::relu_layer(),
                                         LayerSpec::dropout_layer(0.25f),
                                         LayerSpec::dense_layer(8, 3)};
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 10;
    cfg.seed = 5;
    cfg.optimizer.kind = OptimizerKind::adadelta;

    Network<float> net = build_network<float>(arch, 5);
    const std::vector<float> before = net.flatten_params();
    std::vector<EpochStats> hist = train_loop(net, ds.images, ds.labels, cfg);
    REQUIRE(hist.empty());
    REQUIRE(net.flatten_params() == before);

    cfg.epochs = 8;
    Network<float> n1 = build_network<float>(arch, 5);
    Network<float> n2 = build_network<float>(arch, 5);
    train_loop(n1, ds.images, ds.labels, cfg);
    train_loop(n2, ds.images, ds.labels, cfg);
    REQUIRE(n1.flatten_params() == n2.flatten_params());
}

TEST_CASE("evaluate_accuracy basics") {
    Network<float> net = identity_net(3);
    Tensor<float> one({1, 3}, {5.0f, 0.0f, 0.0f});
    REQUIRE(evaluate_accuracy(net, one, {0}) == 1.0);
    REQUIRE(evaluate_accuracy(net, one, {1}) == 0.0);
    REQUIRE_THROWS_AS(evaluate_accuracy(net, one, {}), EngineError);

    // argmax tie breaks toward the lowest class index
    Tensor<float> tie({1, 3}, {2.0f, 2.0f, 0.0f});
    REQUIRE(evaluate_accuracy(net, tie, {0}) == 1.0);
    REQUIRE(evaluate_accuracy(net, tie, {1}) == 0.0);
}

TEST_CASE("untrained 10-class net predicts at chance on random labels") {
    Dataset ds = make_synthetic_dataset(7, 120, 10, 20); // 1200 rows
    // balanced random labels decouple the net's (correlated) predictions
    // from the truth, so accuracy concentrates at 1/k
    SplitMix64 rng(55);
    shuffle_indices(ds.labels, rng);
    Network<float> net = build_network<float>(
        {LayerSpec::dense_layer(20, 16), LayerSpec::relu_layer(), LayerSpec::dense_layer(16, 10)},
        99);
    const double acc = evaluate_accuracy(net, ds.images, ds.labels);
    REQUIRE(acc >= 0.05);
    REQUIRE(acc <= 0.15);
}

TEST_CASE("dropout is identity in eval mode and unbiased in train mode") {
    const std::vector<LayerSpec> arch = {LayerSpec::dropout_layer(0.5f)};
    Network<float> net = build_network<float>(arch, 0);
    Tensor<float> x({1, 8});
    for (std::size_t i = 0; i < 8; ++i) x.data[i] = static_cast<float>(i + 1);

    Tensor<float> logits_eval = run_layers(net, x, ForwardConfig{}, (ForwardTrace<float>*)nullptr);
    REQUIRE(logits_eval.data == x.data);

    SplitMix64 rng = make_stream(123, RngStream::dropout);
    ForwardConfig train_cfg;
    train_cfg.train_mode = true;
    train_cfg.dropout_rng = &rng;
    std::vector<double> mean(8, 0.0);
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        Tensor<float> y = run_layers(net, x, train_cfg, (ForwardTrace<float>*)nullptr);
        for (std::size_t i = 0; i < 8; ++i) mean[i] += y.data[i];
    }
    for (std::size_t i = 0; i < 8; ++i) {
        mean[i] /= trials;
        REQUIRE(mean[i] == Catch::Approx(x.data[i]).epsilon(0.02));
    }
}

TEST_CASE("model serialization") {
    const std::vector<LayerSpec> arch = {
        LayerSpec::conv2d_layer(1, 4),  LayerSpec::relu_layer(),   LayerSpec::maxpool_layer(),
        LayerSpec::flatten_layer(),     LayerSpec::dense_layer(36, 5)};
    Network<float> net = build_network<float>(arch, 21);

    std::vector<std::uint8_t> bytes = serialize_network(net);
    REQUIRE(bytes.size() >= 4);
    REQUIRE(bytes[0] == 'N');
    REQUIRE(bytes[1] == 'N');
    REQUIRE(bytes[2] == 'W');
    REQUIRE(bytes[3] == 'M');

    Network<float> back = deserialize_network(bytes);
    REQUIRE(back.layers.size() == net.layers.size());
    REQUIRE(back.flatten_params() == net.flatten_params());

    SECTION("bad magic") {
        std::vector<std::uint8_t> bad = bytes;
        bad[0] ^= 0xFF;
        REQUIRE_THROWS_AS(deserialize_network(bad), BadMagicError);
    }
    SECTION("bad version") {
        std::vector<std::uint8_t> bad = bytes;
        bad[4] = 0x7F;
        REQUIRE_THROWS_AS(deserialize_network(bad), BadVersionError);
    }
    SECTION("truncation") {
        std::vector<std::uint8_t> bad(bytes.begin(), bytes.begin() + bytes.size() / 2);
        REQUIRE_THROWS_AS(deserialize_network(bad), TruncatedStreamError);
    }
    SECTION("accuracy survives a round trip") {
        Dataset ds = make_synthetic_dataset(3, 20, 5, 64);
        ds = reshape_dataset(std::move(ds), 8, 8, 1);
        const double a = evaluate_accuracy(net, ds.images, ds.labels);
        const double b = evaluate_accuracy(back, ds.images, ds.labels);
        REQUIRE(a == b);
    }
}

TEST_CASE("forward rejects shape mismatches") {
    Network<float> net = build_network<float>({LayerSpec::dense_layer(4, 2)}, 0);
    Tensor<float> bad({2, 3});
    REQUIRE_THROWS_AS(forward(net, bad, ForwardConfig{}), EngineError);
}

TEST_CASE("conv/pool shape inference") {
    const std::vector<LayerSpec> arch = {
        LayerSpec::conv2d_layer(1, 8),  LayerSpec::relu_layer(), LayerSpec::maxpool_layer(),
        LayerSpec::conv2d_layer(8, 16), LayerSpec::relu_layer(), LayerSpec::flatten_layer(),
        LayerSpec::dense_layer(144, 10)};
    const std::vector<std::size_t> out = infer_output_shape(arch, {12, 12, 1});
    REQUIRE(out == std::vector<std::size_t>{10});
    // 12x12 -> conv 10x10x8 -> pool 5x5x8 -> conv 3x3x16 -> flatten 144
}
