#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"

#include "bal/binio.hpp"
#include "bal/harnet.hpp"

using namespace bal;

namespace {

// Hand count of the default topology (C classes, 400 flattened features):
//   conv1d 1->8 k2      8*2*1 + 8    =   24
//   conv1d 8->16 k2     16*2*8 + 16  =  272
//   batchnorm 16        16 + 16      =   32
//   conv2d 16->8 3x3    8*9*16 + 8   = 1160
//   conv2d 8->16 3x3    16*9*8 + 16  = 1168
//   batchnorm 16        16 + 16      =   32
//   dense 400->16       400*16 + 16  = 6416
//   dense 16->8         16*8 + 8     =  136
//   dense 8->6          8*6 + 6      =   54
constexpr std::size_t kDefaultParamCount = 24 + 272 + 32 + 1160 + 1168 + 32 + 6416 + 136 + 54;
static_assert(kDefaultParamCount == 9294);

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("bal_test_" + name);
}

Tensor random_batch(std::size_t n, std::size_t len, RngStream& rng) {
    Tensor x({n, 3, len});
    for (auto& v : x.data()) v = rng.uniform(-3, 3);
    return x;
}

std::vector<RngStream> streams(std::size_t n, std::uint64_t tag) {
    std::vector<RngStream> out;
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(tag, i);
    return out;
}

}  // namespace

TEST_CASE("default configuration") {
    const HarnetConfig c;
    CHECK(c.conv1d_filters == std::array<std::size_t, 2>{8, 16});
    CHECK(c.conv1d_kernel == 2);
    CHECK(c.pool1d == 2);
    CHECK(c.conv2d_filters == std::array<std::size_t, 2>{8, 16});
    CHECK(c.conv2d_kernel == std::array<std::size_t, 2>{3, 3});
    CHECK(c.pool2d == std::array<std::size_t, 2>{3, 2});
    CHECK(c.dense_units == std::array<std::size_t, 2>{16, 8});
    CHECK(c.dropout_p == 0.3);
    CHECK(c.learning_rate == 2e-4);
}

TEST_CASE("parameter count equals the hand count") {
    const auto b = ModelBundle::build(HarnetConfig{}, 1);
    CHECK(b.param_count() == kDefaultParamCount);
    CHECK(ModelBundle::build(HarnetConfig{}, 999).param_count() == kDefaultParamCount);

    CHECK(LayerSpec::dense(400, 16).param_count() == 6416);
    CHECK(LayerSpec::conv2d(16, 8, 3, 3).param_count() == 1160);
}

TEST_CASE("unshared axis weights triple the conv1d parameters") {
    HarnetConfig c;
    c.shared_axis_weights = false;
    CHECK(ModelBundle::build(c, 1).param_count() == kDefaultParamCount + 2 * (24 + 272));
}

TEST_CASE("build is deterministic in the seed") {
    const auto a = ModelBundle::build(HarnetConfig{}, 7);
    const auto b = ModelBundle::build(HarnetConfig{}, 7);
    const auto c = ModelBundle::build(HarnetConfig{}, 8);
    CHECK(a == b);
    CHECK_FALSE(a == c);
}

TEST_CASE("Notch-scale model: two classes, 32 samples") {
    HarnetConfig c;
    c.num_classes = 2;
    c.input_length = 32;
    const auto b = ModelBundle::build(c, 3);
    RngStream rng(1, 1);
    const auto p = b.predict(random_batch(4, 32, rng), Mode::deterministic_eval);
    CHECK(p.shape() == Shape{4, 2});
}

TEST_CASE("too-short input names the failing stage") {
    HarnetConfig c;
    c.input_length = 4;  // pools to 2 -> conv2d 3x3 cannot fit
    try {
        ModelBundle::build(c, 0);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("conv2d") != std::string::npos);
    }
}

TEST_CASE("deterministic-eval output is a probability vector") {
    RngStream rng(5, 5);
    for (std::size_t classes : {2, 6}) {
        HarnetConfig c;
        c.num_classes = classes;
        const auto b = ModelBundle::build(c, classes);
        const auto p = b.predict(random_batch(8, 100, rng), Mode::deterministic_eval);
        for (std::size_t n = 0; n < 8; ++n) {
            double s = 0.0;
            for (std::size_t k = 0; k < classes; ++k) {
                CHECK(p[n * classes + k] >= 0.0);
                s += p[n * classes + k];
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("trunk followed by head reproduces predict bit for bit") {
    RngStream rng(6, 6);
    const auto b = ModelBundle::build(HarnetConfig{}, 2);
    const Tensor x = random_batch(5, 100, rng);
    const auto rngs = streams(5, 77);
    const auto full = b.predict(x, Mode::stochastic_eval, rngs);
    const auto split = b.head(b.trunk(x), Mode::stochastic_eval, rngs);
    CHECK(full == split);
}

TEST_CASE("training on a separable toy set reaches full training accuracy") {
    HarnetConfig c;
    c.num_classes = 2;
    c.input_length = 32;
    auto model = ModelBundle::build(c, 11);
    RngStream rng(12, 0);
    const std::size_t n = 50;
    Tensor x({n, 3, 32});
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2;
        const double level = y[i] ? 2.0 : -2.0;
        for (std::size_t j = 0; j < 3 * 32; ++j) x[i * 96 + j] = level + 0.3 * rng.normal();
    }
    const std::size_t batch = 10;
    for (int epoch = 0; epoch < 10; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle_rng(13, epoch);
        bal::shuffle(order, shuffle_rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t m = std::min(batch, n - start);
            Tensor xb({m, 3, 32});
            std::vector<std::size_t> yb(m);
            std::vector<RngStream> rngs;
            for (std::size_t k = 0; k < m; ++k) {
                std::copy_n(&x[order[start + k] * 96], 96, &xb[k * 96]);
                yb[k] = y[order[start + k]];
                rngs.push_back(RngStream(14, epoch * 1000 + start + k));
            }
            model.train_batch(xb, yb, rngs);
        }
    }
    const auto p = model.predict(x, Mode::deterministic_eval);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += (p[i * 2 + 1] > p[i * 2]) == (y[i] == 1);
    CHECK(correct == n);
    CHECK(model.optimizer().has_value());
    CHECK(model.optimizer()->step == 50);
}

TEST_CASE("bundle files") {
    auto model = ModelBundle::build(HarnetConfig{}, 21);
    RngStream rng(22, 0);
    const Tensor x = random_batch(4, 100, rng);
    const std::vector<std::size_t> y{0, 1, 2, 3};
    model.train_batch(x, y, streams(4, 5));
    model.scaler() = InputScaler{{0.1, 0.2, 0.3}, {1.0, 2.0, 3.0}};

    SUBCASE("layout starts with magic and version") {
        const auto bytes = model.serialize();
        CHECK(bytes.substr(0, 8) == "EBALNET1");
        CHECK(static_cast<unsigned char>(bytes[8]) == 1);
        CHECK(bytes[9] == 0);
        CHECK(bytes[10] == 0);
        CHECK(bytes[11] == 0);
    }
    SUBCASE("save -> load -> save is byte-identical") {
        const auto path = temp_path("roundtrip.bin");
        model.save(path);
        const auto loaded = ModelBundle::load(path);
        const auto again = temp_path("roundtrip2.bin");
        loaded.save(again);
        CHECK(read_file(path) == read_file(again));
        CHECK(loaded.config() == model.config());
        CHECK(loaded.optimizer()->step == model.optimizer()->step);
        CHECK(loaded.scaler() == model.scaler());
        // a second load is bit-identical to the first
        CHECK(ModelBundle::load(again) == loaded);
    }
    SUBCASE("one corrupted payload byte fails the checksum") {
        auto bytes = model.serialize();
        bytes[bytes.size() - 100] ^= 0x01;
        try {
            ModelBundle::deserialize(bytes);
            FAIL("expected rejection");
        } catch (const FormatError& e) {
            CHECK(e.code() == FormatErrorCode::checksum_mismatch);
        }
    }
    SUBCASE("distinct errors for bad magic, version and truncation") {
        const auto good = model.serialize();
        auto bad_magic = good;
        bad_magic[0] = 'X';
        auto bad_version = good;
        bad_version[8] = 2;
        const auto truncated = good.substr(0, good.size() - 1000);
        auto code_of = [](const std::string& b) {
            try {
                ModelBundle::deserialize(b);
            } catch (const FormatError& e) {
                return e.code();
            }
            return FormatErrorCode::io;
        };
        CHECK(code_of(bad_magic) == FormatErrorCode::bad_magic);
        CHECK(code_of(bad_version) == FormatErrorCode::version_mismatch);
        CHECK(code_of(truncated) == FormatErrorCode::truncated);
        CHECK(code_of(good.substr(0, 5)) == FormatErrorCode::truncated);
    }
}
