#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"

#include "bal/acquire.hpp"

using namespace bal;

namespace {

PredictiveSample sample_of(std::size_t T, std::size_t C, std::vector<double> rows) {
    return PredictiveSample::from_passes(Tensor({T, C}, std::move(rows)));
}

// Straightforward two-term formulas, kept separate from the library code.
double ref_entropy(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p) h += -v * std::log(v < 1e-12 ? 1e-12 : v);
    return h;
}

std::vector<double> ref_mean(const PredictiveSample& s) {
    std::vector<double> m(s.classes(), 0.0);
    for (std::size_t t = 0; t < s.passes(); ++t)
        for (std::size_t c = 0; c < s.classes(); ++c) m[c] += s.per_pass[t * s.classes() + c] / double(s.passes());
    return m;
}

double ref_bald(const PredictiveSample& s) {
    double avg = 0.0;
    for (std::size_t t = 0; t < s.passes(); ++t) {
        auto p = s.pass(t);
        avg += ref_entropy({p.begin(), p.end()});
    }
    return ref_entropy(ref_mean(s)) - avg / double(s.passes());
}

PredictiveSample random_sample(RngStream& rng, std::size_t T, std::size_t C) {
    std::vector<double> rows(T * C);
    const double sharp = rng.uniform(0.1, 6.0);
    for (std::size_t t = 0; t < T; ++t) {
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += rows[t * C + c] = std::exp(sharp * rng.normal());
        for (std::size_t c = 0; c < C; ++c) rows[t * C + c] /= z;
    }
    return sample_of(T, C, std::move(rows));
}

// 10 x 6 sample and its reference values, produced by a separate numpy script.
const std::vector<double> kTenBySix = {
    0.199438, 0.500246, 0.238007, 0.009899, 0.005275, 0.04713500000000004,
    0.135189, 0.079713, 0.5612, 0.114539, 0.096959, 0.012399999999999967,
    0.013039, 0.636614, 0.073916, 0.232023, 0.008714, 0.035694000000000004,
    0.023378, 0.050649, 0.628315, 0.017594, 0.07277, 0.2072940000000001,
    0.064716, 0.120817, 0.126459, 0.330272, 0.092372, 0.26536400000000004,
    0.047736, 0.082874, 0.061429, 0.52689, 0.016199, 0.2648720000000001,
    0.06718, 0.029207, 0.756036, 0.063563, 0.068707, 0.01530699999999996,
    0.00188, 0.113292, 0.007619, 0.140601, 0.699779, 0.036829,
    0.012961, 0.126866, 0.220176, 0.047425, 0.072098, 0.520474,
    0.47779, 0.207672, 0.019519, 0.066055, 0.176862, 0.05210200000000009};
constexpr double kTenBySixEntropy = 1.7435489244652624;
constexpr double kTenBySixBald = 0.5233717318135276;
constexpr double kTenBySixVarRatio = 0.7307324000000001;

}  // namespace

TEST_CASE("max entropy") {
    CHECK(max_entropy(sample_of(1, 3, {0, 1, 0})) == 0.0);
    CHECK(max_entropy(sample_of(1, 6, std::vector<double>(6, 1.0 / 6))) == doctest::Approx(1.791759469228055));
    CHECK(std::abs(max_entropy(sample_of(1, 2, {0.7, 0.3})) - 0.6108643020548935) < 1e-12);
}

TEST_CASE("bald") {
    CHECK(bald(sample_of(3, 2, {0.2, 0.8, 0.2, 0.8, 0.2, 0.8})) == 0.0);
    CHECK(std::abs(bald(sample_of(2, 2, {1, 0, 0, 1})) - std::log(2.0)) < 1e-12);
}

TEST_CASE("variation ratio") {
    CHECK(variation_ratio(sample_of(1, 4, {0, 0, 1, 0})) == 0.0);
    CHECK(variation_ratio(sample_of(1, 4, {0.25, 0.25, 0.25, 0.25})) == 0.75);
    CHECK(variation_ratio(sample_of(1, 3, {0.5, 0.3, 0.2})) == 0.5);
}

TEST_CASE("10 x 6 sample matches the independent script") {
    const auto s = sample_of(10, 6, kTenBySix);
    CHECK(std::abs(max_entropy(s) - kTenBySixEntropy) < 1e-10);
    CHECK(std::abs(bald(s) - kTenBySixBald) < 1e-10);
    CHECK(std::abs(variation_ratio(s) - kTenBySixVarRatio) < 1e-10);
}

TEST_CASE("T = 1: mean is the row") {
    const auto s = sample_of(1, 3, {0.1, 0.6, 0.3});
    CHECK(s.mean == std::vector<double>{0.1, 0.6, 0.3});
    CHECK(bald(s) == 0.0);
}

TEST_CASE("bounds and reference agreement over random samples") {
    RngStream rng(41, 0);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t T = 1 + rng.below(12), C = 2 + rng.below(7);
        const auto s = random_sample(rng, T, C);
        const double h = max_entropy(s), b = bald(s), v = variation_ratio(s);
        CHECK(std::abs(h - ref_entropy(ref_mean(s))) < 1e-10);
        CHECK(std::abs(b - ref_bald(s)) < 1e-10);
        CHECK(b >= -1e-12);
        CHECK(b <= h + 1e-12);
        CHECK(h <= std::log(double(C)) + 1e-12);
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
        const auto m = ref_mean(s);
        for (std::size_t c = 0; c < C; ++c) CHECK(std::abs(s.mean[c] - m[c]) < 1e-9);
    }
}

TEST_CASE("random scores") {
    const RngStream base(9, 9);
    CHECK(random_score(base.derive(1)) == random_score(base.derive(1)));
    CHECK(random_score(base.derive(1)) != random_score(base.derive(2)));
    double sum = 0.0;
    for (std::uint64_t i = 0; i < 100000; ++i) {
        const double u = random_score(base.derive(i));
        CHECK_FALSE((u < 0.0 || u >= 1.0));
        sum += u;
    }
    CHECK(sum / 1e5 >= 0.49);
    CHECK(sum / 1e5 <= 0.51);
}

TEST_CASE("acquisition count") {
    CHECK(acquisition_count(0.5, 123) == 62);
    CHECK(acquisition_count(0.0, 123) == 0);
    CHECK(acquisition_count(1.0, 123) == 123);
    CHECK(acquisition_count(0.6, 5) == 3);
    CHECK(acquisition_count(0.2, 10) == 2);
    CHECK(acquisition_count(0.07, 100) == 7);  // 0.07 * 100 = 7.000000000000001
    CHECK(acquisition_count(0.1 + 0.2, 10) == 3);
    CHECK(acquisition_count(0.4, 0) == 0);
    CHECK_THROWS_AS(acquisition_count(1.5, 10), std::invalid_argument);
    CHECK_THROWS_AS(acquisition_count(-0.1, 10), std::invalid_argument);
}

TEST_CASE("ranking is stable and scale invariant") {
    const auto b = rank_scores({0.3, 0.9, 0.3, 0.1, 0.9}, 0.6, Acquisition::bald);
    CHECK(b.ranking == std::vector<std::size_t>{1, 4, 0, 2, 3});
    CHECK(b.selected == std::vector<std::size_t>{1, 4, 0});
    const auto scaled = rank_scores({3.0, 9.0, 3.0, 1.0, 9.0}, 0.6, Acquisition::bald);
    CHECK(scaled.ranking == b.ranking);
    CHECK(scaled.selected == b.selected);
    CHECK_THROWS_AS(parse_acquisition("entropy"), std::invalid_argument);
    CHECK(parse_acquisition("varratio") == Acquisition::variation_ratio);
}

TEST_CASE("MC prediction on a model") {
    HarnetConfig cfg;
    cfg.input_length = 32;
    const auto model = ModelBundle::build(cfg, 4);
    RngStream rng(50, 0);
    Tensor x({7, 3, 32});
    for (auto& v : x.data()) v = rng.uniform(-2, 2);
    std::vector<std::uint64_t> ids{10, 11, 12, 13, 14, 15, 16};
    const RngStream base(51, 0);

    SUBCASE("repeatable and equal to T full passes") {
        const auto a = predict_mc(model, x, ids, 10, base);
        CHECK(a == predict_mc(model, x, ids, 10, base));
        CHECK(a == predict_mc(model, x, ids, 10, base, false));
        for (const auto& s : a) {
            for (std::size_t t = 0; t < 10; ++t) {
                const auto p = s.pass(t);
                CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-6);
            }
        }
    }
    SUBCASE("independent of window order") {
        const auto a = predict_mc(model, x, ids, 5, base);
        Tensor xr({7, 3, 32});
        std::vector<std::uint64_t> rid(7);
        for (std::size_t n = 0; n < 7; ++n) {
            std::copy_n(&x[(6 - n) * 96], 96, &xr[n * 96]);
            rid[n] = ids[6 - n];
        }
        const auto b = predict_mc(model, xr, rid, 5, base);
        for (std::size_t n = 0; n < 7; ++n) CHECK(a[n] == b[6 - n]);
    }
    SUBCASE("dropout p = 0 makes every pass the deterministic output") {
        HarnetConfig c0 = cfg;
        c0.dropout_p = 0.0;
        const auto m0 = ModelBundle::build(c0, 4);
        const auto det = m0.predict(x, Mode::deterministic_eval);
        const auto s = predict_mc(m0, x, ids, 10, base);
        for (std::size_t n = 0; n < 7; ++n) {
            for (std::size_t t = 0; t < 10; ++t)
                for (std::size_t c = 0; c < 6; ++c) CHECK(s[n].pass(t)[c] == det[n * 6 + c]);
            CHECK(bald(s[n]) == 0.0);
            const auto single = PredictiveSample::from_passes(Tensor({1, 6}, {&det[n * 6], &det[n * 6] + 6}));
            CHECK(max_entropy(s[n]) == max_entropy(single));
            CHECK(variation_ratio(s[n]) == variation_ratio(single));
        }
    }
    SUBCASE("select") {
        const SelectOptions half{Acquisition::variation_ratio, 0.5, 10};
        const auto b = select(model, x, ids, half, base);
        CHECK(b.selected.size() == 4);
        CHECK(b.scores.size() == 7);
        const auto again = select(model, x, ids, half, base);
        CHECK(again.scores == b.scores);
        CHECK(again.selected == b.selected);

        const auto none = select(model, x, ids, {Acquisition::bald, 0.0, 10}, base);
        CHECK(none.selected.empty());
        CHECK(none.scores.size() == 7);

        const auto all = select(model, x, ids, {Acquisition::random, 1.0, 10}, base);
        CHECK(std::set<std::size_t>(all.selected.begin(), all.selected.end()).size() == 7);
    }
}
