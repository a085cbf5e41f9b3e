#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "nnwm/carrier.hpp"
#include "nnwm/codec.hpp"
#include "nnwm/dataset.hpp"

using namespace nnwm;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("nnwm_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
    return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
            static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

void append(std::vector<std::uint8_t>& v, const std::vector<std::uint8_t>& w) {
    v.insert(v.end(), w.begin(), w.end());
}

} // namespace

TEST_CASE("idx loader on a hand-built fixture") {
    TempDir tmp;
    // 2 images of 2x2, pixel values 0,128,255,...
    std::vector<std::uint8_t> img;
    append(img, be32(0x00000803));
    append(img, be32(2));
    append(img, be32(2));
    append(img, be32(2));
    for (std::uint8_t b : {0, 128, 255, 64, 10, 20, 30, 40}) img.push_back(b);
    std::vector<std::uint8_t> lab;
    append(lab, be32(0x00000801));
    append(lab, be32(2));
    lab.push_back(1);
    lab.push_back(0);
    write_bytes(tmp.file("img.idx"), img);
    write_bytes(tmp.file("lab.idx"), lab);

    Dataset ds = load_idx_dataset(tmp.file("img.idx"), tmp.file("lab.idx"));
    REQUIRE(ds.size() == 2);
    REQUIRE(ds.images.shape == std::vector<std::size_t>{2, 2, 2, 1});
    REQUIRE(ds.images.data[0] == 0.0f);
    REQUIRE(ds.images.data[2] == 1.0f); // byte 255 scales to exactly 1.0
    REQUIRE(ds.images.data[1] == Catch::Approx(128.0 / 255.0));
    REQUIRE(ds.labels == std::vector<int>{1, 0});

    SECTION("bad magic") {
        std::vector<std::uint8_t> bad = img;
        bad[3] = 0x07;
        write_bytes(tmp.file("bad.idx"), bad);
        REQUIRE_THROWS_AS(load_idx_dataset(tmp.file("bad.idx"), tmp.file("lab.idx")),
                          BadIdxMagicError);
    }
    SECTION("count mismatch") {
        std::vector<std::uint8_t> lab3;
        append(lab3, be32(0x00000801));
        append(lab3, be32(3));
        lab3.insert(lab3.end(), {0, 1, 0});
        write_bytes(tmp.file("lab3.idx"), lab3);
        REQUIRE_THROWS_AS(load_idx_dataset(tmp.file("img.idx"), tmp.file("lab3.idx")),
                          IdxCountMismatchError);
    }
    SECTION("truncated image payload") {
        std::vector<std::uint8_t> trunc(img.begin(), img.end() - 3);
        write_bytes(tmp.file("trunc.idx"), trunc);
        REQUIRE_THROWS_AS(load_idx_dataset(tmp.file("trunc.idx"), tmp.file("lab.idx")),
                          IdxTruncatedError);
    }
}

TEST_CASE("idx save/load round trip") {
    TempDir tmp;
    Dataset ds = make_synthetic_dataset(5, 10, 3, 16);
    ds = reshape_dataset(std::move(ds), 4, 4, 1);
    save_idx_dataset(ds, tmp.file("x.idx"), tmp.file("y.idx"));
    Dataset back = load_idx_dataset(tmp.file("x.idx"), tmp.file("y.idx"));
    REQUIRE(back.size() == ds.size());
    REQUIRE(back.labels == ds.labels);
    for (std::size_t i = 0; i < ds.images.data.size(); ++i)
        REQUIRE(back.images.data[i] == Catch::Approx(ds.images.data[i]).margin(0.5 / 255.0 + 1e-6));
}

TEST_CASE("synthetic dataset determinism and balance") {
    Dataset a = make_synthetic_dataset(1, 50, 2, 2);
    Dataset b = make_synthetic_dataset(1, 50, 2, 2);
    REQUIRE(a.images.data == b.images.data);
    REQUIRE(a.labels == b.labels);

    std::vector<int> counts(2, 0);
    for (int l : a.labels) ++counts[l];
    REQUIRE(counts == std::vector<int>{50, 50});
    for (float v : a.images.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
    }

    Dataset c = make_synthetic_dataset(2, 50, 2, 2);
    REQUIRE(a.images.data != c.images.data);
}

TEST_CASE("bit/label codec") {
    SECTION("spec example: 101110 with k=10") {
        const Bits bits = {1, 0, 1, 1, 1, 0};
        REQUIRE(bits_to_labels(bits, 10) == std::vector<int>{5, 6});
    }
    SECTION("3000 bits at k=10 need 1000 carriers") {
        REQUIRE(carrier_count(3000, 10) == 1000);
    }
    SECTION("round trip of 1000 random bits") {
        const Bits bits = random_bits(1000, 9);
        const std::vector<int> labels = bits_to_labels(bits, 10);
        REQUIRE(labels.size() == carrier_count(1000, 10));
        REQUIRE(labels_to_bits(labels, 10, 1000) == bits);
    }
    SECTION("padding truncates back") {
        const Bits bits = {1, 1, 1, 1}; // k=10: groups 111|1(00) -> labels 7,4
        const std::vector<int> labels = bits_to_labels(bits, 10);
        REQUIRE(labels == std::vector<int>{7, 4});
        REQUIRE(labels_to_bits(labels, 10, 4) == bits);
    }
    SECTION("label outside the 2^b alphabet is rejected") {
        REQUIRE_THROWS_AS(labels_to_bits({8}, 10, 3), CodecError);
        REQUIRE_THROWS_AS(labels_to_bits({-1}, 10, 3), CodecError);
    }
    SECTION("hex round trip") {
        const Bits bits = random_bits(77, 4);
        REQUIRE(hex_to_bits(bits_to_hex(bits), 77) == bits);
    }
    SECTION("bits per label") {
        REQUIRE(bits_per_label(2) == 1);
        REQUIRE(bits_per_label(10) == 3);
        REQUIRE(bits_per_label(16) == 4);
        REQUIRE_THROWS_AS(bits_per_label(1), CodecError);
    }
}

TEST_CASE("carrier generation") {
    WatermarkSpec spec;
    spec.bits = random_bits(30, 3);
    spec.seed = 11;
    spec.carrier_kind = CarrierKind::random_walk;
    spec.k = 10;
    spec.height = 28;
    spec.width = 28;
    spec.channels = 1;

    REQUIRE(spec.m() == 10); // ceil(30/3)

    CarrierSet a = generate_carrier_set(spec);
    REQUIRE(a.size() == 10);
    REQUIRE(a.labels == bits_to_labels(spec.bits, 10));

    SECTION("bit-exact regeneration") {
        CarrierSet b = generate_carrier_set(spec);
        REQUIRE(a.images.data == b.images.data);
        REQUIRE(a.labels == b.labels);
    }
    SECTION("random walk stays within pixel-count bounds") {
        for (std::size_t i = 0; i < a.size(); ++i) {
            std::size_t nonzero = 0;
            for (std::size_t e = 0; e < 784; ++e)
                if (a.images.row(i)[e] != 0.0f) ++nonzero;
            REQUIRE(nonzero >= 1);
            REQUIRE(nonzero <= 784);
        }
    }
    SECTION("labels round trip through the codec") {
        REQUIRE(labels_to_bits(a.labels, spec.k, spec.n()) == spec.bits);
    }
    SECTION("empty watermark is rejected") {
        WatermarkSpec bad = spec;
        bad.bits.clear();
        REQUIRE_THROWS_AS(generate_carrier_set(bad), CodecError);
    }
    SECTION("other carrier kinds stay in range and are distinct") {
        for (CarrierKind kind :
             {CarrierKind::white_noise, CarrierKind::uniform_noise, CarrierKind::one_hot}) {
            WatermarkSpec s2 = spec;
            s2.carrier_kind = kind;
            CarrierSet c = generate_carrier_set(s2);
            for (float v : c.images.data) {
                REQUIRE(v >= 0.0f);
                REQUIRE(v <= 1.0f);
            }
            if (kind == CarrierKind::one_hot) {
                for (std::size_t i = 0; i < c.size(); ++i) {
                    std::size_t ones = 0;
                    for (std::size_t e = 0; e < 784; ++e)
                        if (c.images.row(i)[e] == 1.0f) ++ones;
                    REQUIRE(ones == 1);
                }
            }
        }
    }
}

TEST_CASE("carrier distribution differs from the data distribution") {
    WatermarkSpec spec;
    spec.bits = random_bits(300, 3);
    spec.seed = 4;
    spec.k = 10;
    CarrierSet carrier = generate_carrier_set(spec);
    double carrier_mean = 0.0;
    for (float v : carrier.images.data) carrier_mean += v;
    carrier_mean /= static_cast<double>(carrier.images.data.size());

    Dataset ds = make_synthetic_dataset(8, 100, 10, 784);
    double data_mean = 0.0;
    for (float v : ds.images.data) data_mean += v;
    data_mean /= static_cast<double>(ds.images.data.size());

    REQUIRE(std::abs(carrier_mean - data_mean) >= 0.05);
}

TEST_CASE("refining split") {
    Dataset ds = make_synthetic_dataset(6, 100, 10, 8); // N = 1000
    auto [train, refining] = split_refining_set(ds, 0.2, 77);
    REQUIRE(train.size() == 800);
    REQUIRE(refining.size() == 200);

    SECTION("deterministic per seed") {
        auto [t2, r2] = split_refining_set(ds, 0.2, 77);
        REQUIRE(t2.images.data == train.images.data);
        REQUIRE(r2.labels == refining.labels);
        auto [t3, r3] = split_refining_set(ds, 0.2, 78);
        REQUIRE(t3.images.data != train.images.data);
    }
    SECTION("parts form a partition of the original multiset") {
        auto row_key = [](const Tensor<float>& t, std::size_t r) {
            return std::vector<float>(t.row(r), t.row(r) + t.row_numel());
        };
        std::vector<std::vector<float>> all;
        for (std::size_t r = 0; r < ds.size(); ++r) all.push_back(row_key(ds.images, r));
        std::vector<std::vector<float>> parts;
        for (std::size_t r = 0; r < train.size(); ++r) parts.push_back(row_key(train.images, r));
        for (std::size_t r = 0; r < refining.size(); ++r)
            parts.push_back(row_key(refining.images, r));
        std::sort(all.begin(), all.end());
        std::sort(parts.begin(), parts.end());
        REQUIRE(all == parts);
    }
    SECTION("fraction bounds") {
        REQUIRE_THROWS_AS(split_refining_set(ds, 0.0, 1), DataError);
        REQUIRE_THROWS_AS(split_refining_set(ds, 1.0, 1), DataError);
    }
}
