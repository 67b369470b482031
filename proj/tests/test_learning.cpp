#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "vcsfl/learning.hpp"

using namespace vcsfl;

namespace {

TrainConfig cfg_with(double alpha, double beta) {
    TrainConfig cfg;
    cfg.sce_alpha = alpha;
    cfg.sce_beta = beta;
    return cfg;
}

double loss_only(std::span<const double> logits, std::uint32_t label, const TrainConfig& cfg) {
    return sce_loss(logits, label, cfg).loss;
}

// Mean loss of a model over a dataset; the objective local_train descends.
double dataset_loss(const ModelParams& m, const Dataset& ds, const TrainConfig& cfg) {
    std::vector<double> hidden(m.shape.hidden_dim), logits(m.shape.num_classes);
    double total = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        forward_logits(m, ds.row(i), hidden, logits);
        total += sce_loss(logits, ds.labels[i], cfg).loss;
    }
    return total / double(ds.size());
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "vcsfl-learning-tests";
    std::filesystem::create_directories(dir);
    return dir;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void push_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(std::uint8_t(x >> 24));
    v.push_back(std::uint8_t(x >> 16));
    v.push_back(std::uint8_t(x >> 8));
    v.push_back(std::uint8_t(x));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                     const std::vector<std::uint8_t>& pixels,
                                     std::uint32_t magic = 0x00000803) {
    std::vector<std::uint8_t> v;
    push_u32be(v, magic);
    push_u32be(v, n);
    push_u32be(v, rows);
    push_u32be(v, cols);
    v.insert(v.end(), pixels.begin(), pixels.end());
    return v;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t n, const std::vector<std::uint8_t>& labels,
                                     std::uint32_t magic = 0x00000801) {
    std::vector<std::uint8_t> v;
    push_u32be(v, magic);
    push_u32be(v, n);
    v.insert(v.end(), labels.begin(), labels.end());
    return v;
}

}  // namespace

TEST_CASE("sce loss gradient matches central finite differences") {
    const double h = 1e-5;
    Rng rng(2024);
    for (double alpha : {0.1, 1.0, 5.0}) {
        for (double beta : {0.1, 1.0, 5.0}) {
            TrainConfig cfg = cfg_with(alpha, beta);
            for (int rep = 0; rep < 20; ++rep) {
                std::size_t c_count = 2 + rng.below(8);
                std::vector<double> z(c_count);
                for (double& v : z) v = rng.uniform(-4.0, 4.0);
                auto label = std::uint32_t(rng.below(c_count));
                SceLoss analytic = sce_loss(z, label, cfg);
                for (std::size_t c = 0; c < c_count; ++c) {
                    std::vector<double> zp = z, zm = z;
                    zp[c] += h;
                    zm[c] -= h;
                    double numeric =
                        (loss_only(zp, label, cfg) - loss_only(zm, label, cfg)) / (2 * h);
                    CHECK(std::abs(analytic.grad_logits[c] - numeric) < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("sce loss reduces to plain cross-entropy when beta is zero") {
    TrainConfig cfg = cfg_with(0.7, 0.0);
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> z(5);
        for (double& v : z) v = rng.uniform(-3.0, 3.0);
        auto label = std::uint32_t(rng.below(5));
        // Naive long-double softmax cross-entropy as the oracle.
        long double zsum = 0.0L;
        for (double v : z) zsum += expl((long double)v);
        long double ce = -logl(expl((long double)z[label]) / zsum);
        CHECK(loss_only(z, label, cfg) == doctest::Approx(0.7 * double(ce)).epsilon(1e-12));
    }
}

TEST_CASE("reverse term equals -log_clamp * (1 - p_label) when alpha is zero") {
    TrainConfig cfg = cfg_with(0.0, 2.0);
    cfg.log_clamp = -4.0;
    std::vector<double> z = {1.0, -0.5, 0.25};
    long double zsum = 0.0L;
    for (double v : z) zsum += expl((long double)v);
    for (std::uint32_t label = 0; label < 3; ++label) {
        long double p = expl((long double)z[label]) / zsum;
        CHECK(loss_only(z, label, cfg) ==
              doctest::Approx(2.0 * 4.0 * double(1.0L - p)).epsilon(1e-12));
    }
}

TEST_CASE("sce loss is non-negative and rejects bad labels") {
    TrainConfig cfg = cfg_with(0.1, 1.0);
    Rng rng(7);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> z(4);
        for (double& v : z) v = rng.uniform(-20.0, 20.0);
        CHECK(loss_only(z, std::uint32_t(rng.below(4)), cfg) >= 0.0);
    }
    CHECK_THROWS_AS(sce_loss(std::vector<double>{1.0, 2.0}, 2, cfg), DimensionMismatch);
    CHECK_THROWS_AS(sce_loss(std::vector<double>{}, 0, cfg), DimensionMismatch);
}

TEST_CASE("train config validation") {
    TrainConfig ok;
    CHECK_NOTHROW(ok.validate());
    TrainConfig bad = ok;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.sce_alpha = -0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.sce_alpha = 0.0;
    bad.sce_beta = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ok;
    bad.log_clamp = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward logits match a by-hand oracle") {
    SUBCASE("linear") {
        ModelShape shape{2, 0, 2};
        // W = [[1,2],[3,4]], b = [0.5, -1]
        ModelParams m{shape, {1, 2, 3, 4, 0.5, -1}};
        double x[2] = {10, 100};
        std::vector<double> logits(2);
        forward_logits(m, x, {}, logits);
        CHECK(logits[0] == doctest::Approx(1 * 10 + 2 * 100 + 0.5));
        CHECK(logits[1] == doctest::Approx(3 * 10 + 4 * 100 - 1));
    }
    SUBCASE("one hidden layer") {
        ModelShape shape{2, 2, 1};
        // W1 = [[1,0],[0,1]], b1 = [0, 0.5], W2 = [[2,-1]], b2 = [0.25]
        ModelParams m{shape, {1, 0, 0, 1, 0, 0.5, 2, -1, 0.25}};
        double x[2] = {0.3, -0.2};
        std::vector<double> hidden(2), logits(1);
        forward_logits(m, x, hidden, logits);
        double h0 = std::tanh(0.3), h1 = std::tanh(-0.2 + 0.5);
        CHECK(logits[0] == doctest::Approx(2 * h0 - 1 * h1 + 0.25));
    }
}

TEST_CASE("backpropagated parameter gradient matches finite differences") {
    // Recover the batch-averaged gradient from one SGD step and compare
    // against central finite differences of the dataset loss.
    ModelShape shape{3, 4, 3};
    ModelParams start = random_model(shape, 0.5, 99);
    Dataset ds = synth_dataset(6, 3, 3, 5);
    TrainConfig cfg = cfg_with(0.4, 1.5);
    cfg.epochs = 1;
    cfg.batch_size = ds.size();  // one full batch -> exactly one update
    cfg.lr = 1.0;
    cfg.seed = 123;
    ModelParams stepped = local_train(start, ds, cfg);

    const double h = 1e-6;
    for (std::size_t i = 0; i < start.flat.size(); ++i) {
        ModelParams plus = start, minus = start;
        plus.flat[i] += h;
        minus.flat[i] -= h;
        double numeric = (dataset_loss(plus, ds, cfg) - dataset_loss(minus, ds, cfg)) / (2 * h);
        double analytic = (start.flat[i] - stepped.flat[i]) / cfg.lr;
        CHECK(std::abs(analytic - numeric) < 1e-5);
    }
}

TEST_CASE("local train descends, is deterministic, and never mutates its input") {
    Dataset ds = synth_dataset(200, 8, 4, 21);
    ModelShape shape{8, 6, 4};
    ModelParams start = random_model(shape, 0.1, 3);
    std::vector<double> saved = start.flat;
    TrainConfig cfg = cfg_with(0.1, 1.0);
    cfg.epochs = 5;
    cfg.batch_size = 16;
    cfg.lr = 0.2;
    cfg.seed = 77;

    ModelParams trained = local_train(start, ds, cfg);
    CHECK(start.flat == saved);
    CHECK(dataset_loss(trained, ds, cfg) < dataset_loss(start, ds, cfg));

    ModelParams again = local_train(start, ds, cfg);
    CHECK(trained.flat == again.flat);

    TrainConfig other = cfg;
    other.seed = 78;
    CHECK(local_train(start, ds, other).flat != trained.flat);

    TrainConfig none = cfg;
    none.epochs = 0;
    CHECK(local_train(start, ds, none).flat == start.flat);
}

TEST_CASE("divergent training raises with epoch and batch indices") {
    // Softmax gradients are bounded, so blowing up takes lr * |grad| * |x|
    // past double range in one step: 1e305 * ~1 * 1e4 overflows the first
    // update, and the next sample's logits come out non-finite.
    Dataset ds;
    ds.input_dim = 2;
    ds.num_classes = 2;
    for (int i = 0; i < 8; ++i) {
        ds.features.push_back(1e4);
        ds.features.push_back(i % 2 ? 1.0 : -1.0);
        ds.labels.push_back(std::uint32_t(i % 2));
    }
    ModelParams start = zero_model(ModelShape{2, 0, 2});
    TrainConfig cfg = cfg_with(1.0, 0.5);
    cfg.lr = 1e305;
    cfg.epochs = 3;
    cfg.batch_size = 1;
    try {
        local_train(start, ds, cfg);
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        CHECK(e.epoch == 0);
        CHECK(e.batch >= 1);  // the batch after the exploding update
    }
}

TEST_CASE("synthetic blobs are linearly separable to high accuracy") {
    Dataset ds = synth_dataset(600, 16, 4, 42);
    CHECK(ds.size() == 600);
    CHECK(ds.input_dim == 16);
    // Balanced labels.
    std::vector<int> counts(4, 0);
    for (auto l : ds.labels) counts[l]++;
    CHECK(counts == std::vector<int>{150, 150, 150, 150});

    ModelParams start = zero_model(ModelShape{16, 0, 4});
    TrainConfig cfg = cfg_with(1.0, 1.0);
    cfg.epochs = 20;
    cfg.batch_size = 32;
    cfg.lr = 0.5;
    cfg.seed = 1;
    ModelParams trained = local_train(start, ds, cfg);
    CHECK(evaluate_accuracy(trained, ds) >= 0.95);

    // Same seed reproduces the dataset bit for bit; another seed does not.
    Dataset same = synth_dataset(600, 16, 4, 42);
    CHECK(same.features == ds.features);
    CHECK(same.labels == ds.labels);
    CHECK(synth_dataset(600, 16, 4, 43).features != ds.features);
}

TEST_CASE("gaussian noise has the requested spread and respects the range") {
    // 1000 x 100 = 1e5 features; sentinels pin the clipping range far away
    // so the empirical delta spread is untouched by the clamp.
    Dataset ds = synth_dataset(1000, 100, 4, 8);
    ds.features[0] = -1000.0;
    ds.features[1] = 1000.0;
    const double sigma = 0.7;
    Dataset noisy = add_gaussian_noise(ds, sigma, 31);
    CHECK(noisy.noise_sigma == doctest::Approx(sigma));

    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 2; i < ds.features.size(); ++i) {
        double delta = noisy.features[i] - ds.features[i];
        sum += delta;
        sq += delta * delta;
        ++n;
    }
    double mean = sum / double(n);
    double std_dev = std::sqrt(sq / double(n) - mean * mean);
    CHECK(std_dev > 0.95 * sigma);
    CHECK(std_dev < 1.05 * sigma);

    SUBCASE("clipping keeps noisy features inside the original range") {
        Dataset tight = synth_dataset(500, 8, 4, 12);
        auto [lo, hi] = std::minmax_element(tight.features.begin(), tight.features.end());
        Dataset clipped = add_gaussian_noise(tight, 5.0, 4);
        for (double v : clipped.features) {
            CHECK(v >= *lo);
            CHECK(v <= *hi);
        }
    }
    SUBCASE("sigma zero is a bitwise copy") {
        Dataset copy = add_gaussian_noise(ds, 0.0, 123);
        CHECK(copy.features == ds.features);
        CHECK(copy.noise_sigma == ds.noise_sigma);
    }
    SUBCASE("negative sigma rejected") {
        CHECK_THROWS_AS(add_gaussian_noise(ds, -0.1, 1), ConfigError);
    }
}

TEST_CASE("idx loader parses a hand-built fixture") {
    auto dir = temp_dir();
    auto img_path = (dir / "imgs.idx").string();
    auto lab_path = (dir / "labs.idx").string();
    write_bytes(img_path, idx_images(2, 2, 2, {0, 255, 128, 64, 255, 255, 0, 0}));
    write_bytes(lab_path, idx_labels(2, {1, 0}));

    Dataset ds = load_idx(img_path, lab_path);
    CHECK(ds.size() == 2);
    CHECK(ds.input_dim == 4);
    CHECK(ds.num_classes == 2);
    CHECK(ds.labels == std::vector<std::uint32_t>{1, 0});
    CHECK(ds.features[0] == doctest::Approx(0.0));
    CHECK(ds.features[1] == doctest::Approx(1.0));
    CHECK(ds.features[2] == doctest::Approx(128.0 / 255.0));
    CHECK(ds.features[3] == doctest::Approx(64.0 / 255.0));
    CHECK(ds.features[4] == doctest::Approx(1.0));
    CHECK(ds.features[7] == doctest::Approx(0.0));

    SUBCASE("average pooling downsample") {
        auto big_img = (dir / "big.idx").string();
        // One 4x4 image whose 2x2 quadrants average to 10, 20, 30, 40.
        write_bytes(big_img, idx_images(1, 4, 4,
                                        {10, 10, 20, 20, 10, 10, 20, 20,
                                         30, 30, 40, 40, 30, 30, 40, 40}));
        auto one_lab = (dir / "one.idx").string();
        write_bytes(one_lab, idx_labels(1, {3}));
        Dataset pooled = load_idx(big_img, one_lab, 4);
        CHECK(pooled.input_dim == 4);
        CHECK(pooled.features[0] == doctest::Approx(10.0 / 255.0));
        CHECK(pooled.features[1] == doctest::Approx(20.0 / 255.0));
        CHECK(pooled.features[2] == doctest::Approx(30.0 / 255.0));
        CHECK(pooled.features[3] == doctest::Approx(40.0 / 255.0));
        CHECK_THROWS_AS(load_idx(big_img, one_lab, 3), ConfigError);
        CHECK_THROWS_AS(load_idx(big_img, one_lab, 25), ConfigError);
    }
}

TEST_CASE("idx loader rejects malformed files") {
    auto dir = temp_dir();
    auto ok_img = (dir / "ok_img.idx").string();
    auto ok_lab = (dir / "ok_lab.idx").string();
    write_bytes(ok_img, idx_images(2, 2, 2, std::vector<std::uint8_t>(8, 7)));
    write_bytes(ok_lab, idx_labels(2, {0, 1}));

    SUBCASE("byte-reversed image magic") {
        auto bad = (dir / "bad_magic.idx").string();
        write_bytes(bad, idx_images(2, 2, 2, std::vector<std::uint8_t>(8, 7), 0x03080000));
        CHECK_THROWS_AS(load_idx(bad, ok_lab), FormatError);
    }
    SUBCASE("label magic wrong") {
        auto bad = (dir / "bad_lmagic.idx").string();
        write_bytes(bad, idx_labels(2, {0, 1}, 0x01080000));
        CHECK_THROWS_AS(load_idx(ok_img, bad), FormatError);
    }
    SUBCASE("count mismatch") {
        auto bad = (dir / "three_labs.idx").string();
        write_bytes(bad, idx_labels(3, {0, 1, 0}));
        CHECK_THROWS_AS(load_idx(ok_img, bad), FormatError);
    }
    SUBCASE("truncated pixel data") {
        auto bad = (dir / "short_img.idx").string();
        write_bytes(bad, idx_images(2, 2, 2, std::vector<std::uint8_t>(7, 7)));
        CHECK_THROWS_AS(load_idx(bad, ok_lab), FormatError);
    }
    SUBCASE("trailing bytes") {
        auto bad = (dir / "long_img.idx").string();
        write_bytes(bad, idx_images(2, 2, 2, std::vector<std::uint8_t>(9, 7)));
        CHECK_THROWS_AS(load_idx(bad, ok_lab), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx((dir / "nope.idx").string(), ok_lab), IoError);
    }
}

TEST_CASE("accuracy ties resolve to the lowest class index") {
    // Zero weights give identical logits; every sample "predicts" class 0.
    Dataset ds = synth_dataset(400, 8, 4, 17);
    ModelParams zero = zero_model(ModelShape{8, 0, 4});
    double class0_freq = 0.0;
    for (auto l : ds.labels) class0_freq += (l == 0);
    class0_freq /= double(ds.size());
    CHECK(evaluate_accuracy(zero, ds) == doctest::Approx(class0_freq));

    SUBCASE("shape mismatch raises") {
        ModelParams wrong = zero_model(ModelShape{9, 0, 4});
        CHECK_THROWS_AS(evaluate_accuracy(wrong, ds), DimensionMismatch);
        ModelParams wrong_c = zero_model(ModelShape{8, 0, 5});
        CHECK_THROWS_AS(evaluate_accuracy(wrong_c, ds), DimensionMismatch);
    }
}

TEST_CASE("parameter layout sizes") {
    CHECK(ModelShape{64, 14, 10}.param_count() == 1060);
    CHECK(ModelShape{16, 0, 4}.param_count() == 68);
    CHECK(ModelShape{8, 4, 3}.param_count() == 51);
}

TEST_CASE("cosine similarity reference") {
    std::vector<double> a = {1, 0, 0}, b = {0, 1, 0}, c = {2, 0, 0};
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    CHECK(cosine_similarity(a, c) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, std::vector<double>{-3, 0, 0}) == doctest::Approx(-1.0));
    CHECK(cosine_similarity(a, std::vector<double>{0, 0, 0}) == 0.0);
    CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1.0}), DimensionMismatch);
}
