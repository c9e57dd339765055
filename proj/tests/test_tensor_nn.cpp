#include <cmath>
#include <numeric>

#include "doctest.h"

#include "bal/layers.hpp"
#include "bal/optim.hpp"
#include "support/gradcheck.hpp"

using namespace bal;
using bal::testing::check_layer;
using bal::testing::random_case;
using bal::testing::random_tensor;

namespace {

Tensor vec(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
}

}  // namespace

TEST_CASE("conv1d same padding matches a hand-unrolled convolution") {
    const auto spec = LayerSpec::conv1d(1, 1, 2);
    std::vector<Tensor> params = {Tensor({1, 1, 1, 2}, {1.0, -1.0}), Tensor({1, 1}, {0.0})};
    const Tensor x({1, 1, 3}, {1.0, 2.0, 4.0});
    const auto y = layer_forward(spec, params, {}, x, Mode::deterministic_eval).output;

    // Kernel 2, 'same': zero pad one sample on the right, cross-correlate.
    const double w0 = 1.0, w1 = -1.0;
    const double x0 = 1.0, x1 = 2.0, x2 = 4.0, pad = 0.0;
    CHECK(y.shape() == Shape{1, 1, 3});
    CHECK(y[0] == w0 * x0 + w1 * x1);
    CHECK(y[1] == w0 * x1 + w1 * x2);
    CHECK(y[2] == w0 * x2 + w1 * pad);
}

TEST_CASE("conv2d 3x3 same padding matches a direct sum") {
    RngStream rng(3, 1);
    const auto spec = LayerSpec::conv2d(2, 1, 3, 3);
    auto params = init_params(spec, rng);
    params[1][0] = 0.25;
    const Tensor x = random_tensor({1, 2, 3, 4}, rng);
    const auto y = layer_forward(spec, params, {}, x, Mode::deterministic_eval).output;
    for (int h = 0; h < 3; ++h)
        for (int w = 0; w < 4; ++w) {
            double expected = 0.25;
            for (int c = 0; c < 2; ++c)
                for (int i = -1; i <= 1; ++i)
                    for (int j = -1; j <= 1; ++j) {
                        const int hh = h + i, ww = w + j;
                        if (hh < 0 || hh >= 3 || ww < 0 || ww >= 4) continue;
                        expected += params[0][((c * 3) + (i + 1)) * 3 + (j + 1)] * x[(c * 3 + hh) * 4 + ww];
                    }
            CHECK(y[h * 4 + w] == doctest::Approx(expected).epsilon(1e-12));
        }
}

TEST_CASE("maxpool1d uses non-overlapping windows and truncates the remainder") {
    const auto spec = LayerSpec::maxpool1d(2);
    const Tensor x({1, 1, 5}, {1, 3, 2, 0, 5});
    const auto y = layer_forward(spec, {}, {}, x, Mode::train).output;
    CHECK(y.shape() == Shape{1, 1, 2});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == 2.0);
}

TEST_CASE("maxpool routes gradient to argmax positions only") {
    RngStream rng(11, 2);
    for (int trial = 0; trial < 20; ++trial) {
        auto c = random_case(trial % 2 ? LayerKind::maxpool2d : LayerKind::maxpool1d, rng);
        const auto f = layer_forward(c.spec, {}, {}, c.input, Mode::train);
        const Tensor g = random_tensor(f.output.shape(), rng);
        const auto b = layer_backward(c.spec, {}, f.cache, g);
        const double in_sum = std::accumulate(g.data().begin(), g.data().end(), 0.0);
        const double out_sum = std::accumulate(b.grad_input.data().begin(), b.grad_input.data().end(), 0.0);
        CHECK(out_sum == doctest::Approx(in_sum).epsilon(1e-12));
        for (std::size_t i = 0; i < b.grad_input.size(); ++i) {
            if (b.grad_input[i] == 0.0) continue;
            bool is_argmax = false;
            for (auto a : f.cache.argmax) is_argmax |= a == i;
            CHECK(is_argmax);
        }
    }
}

TEST_CASE("dropout") {
    const auto spec = LayerSpec::dropout(0.3);
    const Tensor x = vec({1.0, 2.0});

    SUBCASE("identity at deterministic eval") {
        const auto y = layer_forward(spec, {}, {}, x, Mode::deterministic_eval).output;
        CHECK(y == x);
    }
    SUBCASE("active in train and stochastic eval with inverted scaling") {
        std::vector<RngStream> rngs{RngStream(5, 9)};
        const Tensor big({1, 10000}, 1.0);
        for (Mode m : {Mode::train, Mode::stochastic_eval}) {
            const auto y = layer_forward(spec, {}, {}, big, m, rngs).output;
            std::size_t kept = 0;
            for (double v : y.data()) {
                CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.7)));
                kept += v != 0.0;
            }
            CHECK(kept > 6700);
            CHECK(kept < 7300);
        }
    }
    SUBCASE("missing rng streams are rejected outside deterministic eval") {
        CHECK_THROWS(layer_forward(spec, {}, {}, x, Mode::train));
    }
    SUBCASE("probability outside [0, 1) is rejected") {
        CHECK_THROWS(LayerSpec::dropout(1.0).validate());
        CHECK_THROWS(LayerSpec::dropout(-0.1).validate());
        CHECK_NOTHROW(LayerSpec::dropout(0.0).validate());
    }
}

TEST_CASE("relu backward gates on the input sign") {
    const auto spec = LayerSpec::relu();
    const auto f = layer_forward(spec, {}, {}, vec({-1.0, 2.0}), Mode::train);
    const auto b = layer_backward(spec, {}, f.cache, vec({1.0, 1.0}));
    CHECK(b.grad_input[0] == 0.0);
    CHECK(b.grad_input[1] == 1.0);
}

TEST_CASE("dense backward: grad_weights = grad_output outer input") {
    const auto spec = LayerSpec::dense(2, 1);
    std::vector<Tensor> params = {Tensor({1, 2}, {0.4, -0.7}), Tensor({1}, {0.1})};
    const Tensor x = vec({1.5, -2.0});
    const auto f = layer_forward(spec, params, {}, x, Mode::train);
    const auto b = layer_backward(spec, params, f.cache, Tensor({1, 1}, {0.8}));
    CHECK(b.grad_params[0][0] == doctest::Approx(0.8 * 1.5));
    CHECK(b.grad_params[0][1] == doctest::Approx(0.8 * -2.0));

    // central differences at step 1e-5
    const double h = 1e-5;
    for (int k = 0; k < 2; ++k) {
        auto p = params, m = params;
        p[0][k] += h;
        m[0][k] -= h;
        const double fp = 0.8 * layer_forward(spec, p, {}, x, Mode::train).output[0];
        const double fm = 0.8 * layer_forward(spec, m, {}, x, Mode::train).output[0];
        const double numeric = (fp - fm) / (2 * h);
        CHECK(std::abs(b.grad_params[0][k] - numeric) / std::abs(numeric) < 1e-4);
    }
}

TEST_CASE("dense weight decay adds lambda * w to the weight gradient") {
    RngStream rng(21, 0);
    auto with = LayerSpec::dense(3, 2, 1e-4);
    auto without = LayerSpec::dense(3, 2, 0.0);
    auto params = init_params(with, rng);
    const Tensor x = random_tensor({2, 3}, rng);
    const Tensor g = random_tensor({2, 2}, rng);
    const auto bw = layer_backward(with, params, layer_forward(with, params, {}, x, Mode::train).cache, g);
    const auto bo = layer_backward(without, params, layer_forward(without, params, {}, x, Mode::train).cache, g);
    for (std::size_t i = 0; i < params[0].size(); ++i)
        CHECK(bw.grad_params[0][i] - bo.grad_params[0][i] == doctest::Approx(1e-4 * params[0][i]).epsilon(1e-9));
    CHECK(bw.grad_params[1] == bo.grad_params[1]);
}

TEST_CASE("every layer kind matches central finite differences") {
    RngStream rng(2024, 7);
    for (LayerKind kind : bal::testing::kAllKinds) {
        double worst = 0.0;
        for (int trial = 0; trial < 20; ++trial) {
            auto c = random_case(kind, rng);
            const auto r = check_layer(c, rng);
            worst = std::max(worst, r.max_rel_error);
        }
        INFO(to_string(kind));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("eval-mode batchnorm backward matches finite differences") {
    RngStream rng(8, 8);
    for (int trial = 0; trial < 5; ++trial) {
        auto c = random_case(LayerKind::batchnorm, rng);
        c.mode = Mode::deterministic_eval;
        c.buffers[0] = random_tensor(c.buffers[0].shape(), rng);
        c.buffers[1] = random_tensor(c.buffers[1].shape(), rng, 0.5, 2.0);
        CHECK(check_layer(c, rng).max_rel_error < 1e-4);
    }
}

TEST_CASE("softmax + cross-entropy fused gradient equals p - y") {
    RngStream rng(99, 3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t C = 2 + rng.below(5);
        const Tensor z = random_tensor({1, C}, rng, -3, 3);
        const std::size_t target = rng.below(C);
        const auto p = layer_forward(LayerSpec::softmax(), {}, {}, z, Mode::train).output;
        std::vector<double> g(C);
        softmax_cross_entropy_grad(p.data(), target, g);
        for (std::size_t k = 0; k < C; ++k) CHECK(g[k] == p[k] - (k == target ? 1.0 : 0.0));

        const double h = 1e-5;
        for (std::size_t k = 0; k < C; ++k) {
            Tensor zp = z, zm = z;
            zp[k] += h;
            zm[k] -= h;
            const auto pp = layer_forward(LayerSpec::softmax(), {}, {}, zp, Mode::train).output;
            const auto pm = layer_forward(LayerSpec::softmax(), {}, {}, zm, Mode::train).output;
            const double numeric = (cross_entropy(pp.data(), target) - cross_entropy(pm.data(), target)) / (2 * h);
            CHECK(std::abs(g[k] - numeric) < 1e-8);
        }
    }
}

TEST_CASE("softmax sums to one and ignores constant shifts") {
    RngStream rng(4, 4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t C = 2 + rng.below(8);
        Tensor z = random_tensor({1, C}, rng, -10, 10);
        const auto p = layer_forward(LayerSpec::softmax(), {}, {}, z, Mode::train).output;
        CHECK(std::accumulate(p.data().begin(), p.data().end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
        const double shift = rng.uniform(-50, 50);
        for (auto& v : z.data()) v += shift;
        const auto q = layer_forward(LayerSpec::softmax(), {}, {}, z, Mode::train).output;
        for (std::size_t k = 0; k < C; ++k) CHECK(std::abs(p[k] - q[k]) < 1e-9);
    }
}

TEST_CASE("batchnorm train mode normalizes each channel") {
    RngStream rng(17, 1);
    const auto spec = LayerSpec::batchnorm(3);
    auto params = init_params(spec, rng);
    const auto buffers = init_buffers(spec);
    const Tensor x = random_tensor({8, 3, 10}, rng, -4.0, 7.0);
    const auto f = layer_forward(spec, params, buffers, x, Mode::train);
    // identity affine -> output is the normalized input
    for (std::size_t c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t l = 0; l < 10; ++l) sum += f.output[(b * 3 + c) * 10 + l];
        const double mean = sum / 80.0;
        for (std::size_t b = 0; b < 8; ++b)
            for (std::size_t l = 0; l < 10; ++l) {
                const double d = f.output[(b * 3 + c) * 10 + l] - mean;
                sq += d * d;
            }
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(sq / 80.0 - 1.0) < 1e-5);
    }
}

TEST_CASE("batchnorm running statistics use momentum 0.9") {
    const auto spec = LayerSpec::batchnorm(1);
    RngStream rng(1, 1);
    auto params = init_params(spec, rng);
    auto buffers = init_buffers(spec);
    const Tensor x({2, 1, 2}, {1.0, 3.0, 5.0, 7.0});
    const auto f = layer_forward(spec, params, buffers, x, Mode::train);
    update_running_stats(spec, buffers, f.cache);
    CHECK(buffers[0][0] == doctest::Approx(0.9 * 0.0 + 0.1 * 4.0));
    CHECK(buffers[1][0] == doctest::Approx(0.9 * 1.0 + 0.1 * 5.0));
    // eval modes read the running statistics
    const auto e = layer_forward(spec, params, buffers, x, Mode::stochastic_eval).output;
    CHECK(e[0] == doctest::Approx((1.0 - 0.4) / std::sqrt(1.4 + 1e-5)));
}

TEST_CASE("forward is a pure function of its arguments") {
    RngStream rng(31, 5);
    for (LayerKind kind : bal::testing::kAllKinds) {
        auto c = random_case(kind, rng);
        const auto a = layer_forward(c.spec, c.params, c.buffers, c.input, c.mode, c.rngs).output;
        const auto b = layer_forward(c.spec, c.params, c.buffers, c.input, c.mode, c.rngs).output;
        CHECK(a == b);
    }
}

TEST_CASE("shape mismatches name the layer and both shapes") {
    const auto spec = LayerSpec::dense(4, 2);
    RngStream rng(0, 0);
    const auto params = init_params(spec, rng);
    try {
        layer_forward(spec, params, {}, Tensor({1, 3}), Mode::train);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("dense") != std::string::npos);
        CHECK(msg.find("[1, 4]") != std::string::npos);
        CHECK(msg.find("[1, 3]") != std::string::npos);
    }
    CHECK_THROWS_AS(layer_forward(LayerSpec::maxpool1d(4), {}, {}, Tensor({1, 1, 3}), Mode::train), ShapeError);
    CHECK_THROWS_AS(layer_forward(LayerSpec::conv2d(1, 1, 3, 3), std::vector<Tensor>{Tensor({1, 1, 3, 3}), Tensor({1})},
                                  {}, Tensor({1, 1, 2, 5}), Mode::train),
                    ShapeError);
}

TEST_CASE("backward rejects a cache from another layer kind") {
    const auto f = layer_forward(LayerSpec::relu(), {}, {}, vec({1.0}), Mode::train);
    CHECK_THROWS(layer_backward(LayerSpec::softmax(), {}, f.cache, vec({1.0})));
}

TEST_CASE("cross_entropy") {
    CHECK(cross_entropy(std::vector<double>{1.0, 0.0, 0.0}, 0) == doctest::Approx(0.0));
    const std::vector<double> uniform(6, 1.0 / 6.0);
    for (std::size_t t = 0; t < 6; ++t) CHECK(cross_entropy(uniform, t) == doctest::Approx(1.791759).epsilon(1e-6));
    CHECK(cross_entropy(std::vector<double>{0.7, 0.3}, 1) == doctest::Approx(1.203973).epsilon(1e-6));
    // clamp keeps log finite
    CHECK(cross_entropy(std::vector<double>{1.0, 0.0}, 1) == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(cross_entropy(std::vector<double>{0.5, 0.5}, 2), std::out_of_range);
    CHECK_THROWS(cross_entropy(std::vector<double>{0.5, 0.6}, 0));
}

namespace {

// Independent scalar Adam reference.
struct ScalarAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double p, double g, double lr = 2e-4, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        return p - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace

TEST_CASE("adam_step") {
    Tensor p({1}, {0.0});
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> cp{&p};

    SUBCASE("zero gradient on fresh state leaves params and moments at zero") {
        p[0] = 0.5;
        auto s = AdamState::for_params(cp);
        adam_step(s, params, std::vector<Tensor>{Tensor({1}, {0.0})});
        CHECK(p[0] == 0.5);
        CHECK(s.first_moment[0][0] == 0.0);
        CHECK(s.second_moment[0][0] == 0.0);
        CHECK(s.step == 1);
    }
    SUBCASE("first step moves by about lr * sign(grad)") {
        auto s = AdamState::for_params(cp, 2e-4);
        adam_step(s, params, std::vector<Tensor>{Tensor({1}, {1.0})});
        CHECK(p[0] == doctest::Approx(-2e-4).epsilon(1e-6));
    }
    SUBCASE("two identical gradients match the scalar reference") {
        auto s = AdamState::for_params(cp, 2e-4);
        ScalarAdam ref;
        double expected = 0.0;
        for (int i = 0; i < 2; ++i) {
            adam_step(s, params, std::vector<Tensor>{Tensor({1}, {0.37})});
            expected = ref.step(expected, 0.37);
        }
        CHECK(p[0] == expected);
        CHECK(s.step == 2);
    }
    SUBCASE("non-finite gradient is rejected with the tensor name") {
        auto s = AdamState::for_params(cp);
        std::vector<std::string> names{"layers.3.dense.weight"};
        try {
            adam_step(s, params, std::vector<Tensor>{Tensor({1}, {std::nan("")})}, names);
            FAIL("expected rejection");
        } catch (const NonFiniteGradient& e) {
            CHECK(std::string(e.what()).find("layers.3.dense.weight") != std::string::npos);
        }
        CHECK(s.step == 0);
    }
}

TEST_CASE("rng streams are reproducible and domain separated") {
    RngStream a(42, 7), b(42, 7), c(42, 8);
    bool differs = false;
    for (int i = 0; i < 16; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        differs |= x != c.next_u64();
    }
    CHECK(differs);
    CHECK(RngStream(1, 2).derive({3, 4}).next_u64() == RngStream(1, 2).derive(3).derive(4).next_u64());
    // golden values from an independent SplitMix64 implementation
    CHECK(RngStream(0, 0).next_u64() == 0x568a9b0b1a2c05ecull);
    CHECK(RngStream(42, 7).next_u64() == 0xdeb745320506897aull);
}
