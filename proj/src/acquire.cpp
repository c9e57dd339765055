#include "bal/acquire.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bal/optim.hpp"

namespace bal {

PredictiveSample PredictiveSample::from_passes(Tensor per_pass) {
    if (per_pass.rank() != 2) throw ShapeError("PredictiveSample: expected [T, C], got " + shape_str(per_pass.shape()));
    const std::size_t T = per_pass.dim(0), C = per_pass.dim(1);
    std::vector<double> mean(per_pass.data().begin(), per_pass.data().begin() + C);
    bool identical = true;
    for (std::size_t t = 1; t < T && identical; ++t)
        identical = std::equal(mean.begin(), mean.end(), per_pass.data().begin() + t * C);
    if (!identical) {
        for (std::size_t t = 1; t < T; ++t)
            for (std::size_t c = 0; c < C; ++c) mean[c] += per_pass[t * C + c];
        for (auto& m : mean) m /= static_cast<double>(T);
    }
    return {std::move(per_pass), std::move(mean)};
}

std::string_view to_string(Acquisition fn) {
    switch (fn) {
        case Acquisition::max_entropy: return "maxentropy";
        case Acquisition::bald: return "bald";
        case Acquisition::variation_ratio: return "varratio";
        case Acquisition::random: return "random";
    }
    return "?";
}

Acquisition parse_acquisition(std::string_view name) {
    for (auto fn : {Acquisition::max_entropy, Acquisition::bald, Acquisition::variation_ratio, Acquisition::random})
        if (to_string(fn) == name) return fn;
    throw std::invalid_argument("unknown acquisition function '" + std::string(name) +
                                "' (expected maxentropy, bald, varratio or random)");
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) h -= v * std::log(std::max(v, kProbabilityFloor));
    return h;
}

double max_entropy(const PredictiveSample& s) { return entropy(s.mean); }

double bald(const PredictiveSample& s) {
    const double h_mean = entropy(s.mean);
    double acc = 0.0;
    for (std::size_t t = 0; t < s.passes(); ++t) acc += h_mean - entropy(s.pass(t));
    return acc / static_cast<double>(s.passes());
}

double variation_ratio(const PredictiveSample& s) { return 1.0 - *std::max_element(s.mean.begin(), s.mean.end()); }

double random_score(RngStream rng) { return rng.uniform(); }

double acquisition_score(Acquisition fn, const PredictiveSample& s) {
    switch (fn) {
        case Acquisition::max_entropy: return max_entropy(s);
        case Acquisition::bald: return bald(s);
        case Acquisition::variation_ratio: return variation_ratio(s);
        case Acquisition::random: break;
    }
    throw std::invalid_argument("acquisition_score: random scores come from random_score");
}

namespace {

constexpr std::size_t kChunk = 128;

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    Shape s = x.shape();
    const std::size_t row = x.size() / s[0];
    s[0] = end - begin;
    return Tensor(s, std::vector<double>(x.data().begin() + begin * row, x.data().begin() + end * row));
}

}  // namespace

std::vector<PredictiveSample> predict_mc(const ModelBundle& model, const Tensor& x,
                                         std::span<const std::uint64_t> window_ids, std::size_t T,
                                         const RngStream& base, bool share_trunk) {
    if (T == 0) throw std::invalid_argument("predict_mc: T must be >= 1");
    if (x.rank() != 3 || x.dim(0) != window_ids.size())
        throw ShapeError("predict_mc: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(window_ids.size()) + " window ids");
    const std::size_t N = x.dim(0), C = model.config().num_classes;
    std::vector<PredictiveSample> out;
    out.reserve(N);
    for (std::size_t begin = 0; begin < N; begin += kChunk) {
        const std::size_t end = std::min(N, begin + kChunk), m = end - begin;
        const Tensor xc = slice_rows(x, begin, end);
        Tensor features;
        if (share_trunk) features = model.trunk(xc);
        std::vector<Tensor> rows(m, Tensor({T, C}));
        std::vector<RngStream> rngs(m);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t n = 0; n < m; ++n) rngs[n] = base.derive({window_ids[begin + n], t});
            const Tensor p = share_trunk ? model.head(features, Mode::stochastic_eval, rngs)
                                         : model.predict(xc, Mode::stochastic_eval, rngs);
            for (std::size_t n = 0; n < m; ++n) std::copy_n(&p[n * C], C, &rows[n][t * C]);
        }
        for (auto& r : rows) out.push_back(PredictiveSample::from_passes(std::move(r)));
    }
    return out;
}

std::size_t acquisition_count(double eta, std::size_t pool_size) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0, 1], got " + std::to_string(eta));
    // The epsilon keeps products such as 0.6 * 5 = 3.0000000000000004 at 3.
    const double k = std::ceil(eta * static_cast<double>(pool_size) - 1e-9);
    return std::min(pool_size, static_cast<std::size_t>(std::max(0.0, k)));
}

AcquisitionBatch rank_scores(std::vector<double> scores, double eta, Acquisition fn) {
    AcquisitionBatch b;
    b.eta = eta;
    b.function = fn;
    const std::size_t k = acquisition_count(eta, scores.size());
    b.ranking.resize(scores.size());
    std::iota(b.ranking.begin(), b.ranking.end(), 0);
    std::stable_sort(b.ranking.begin(), b.ranking.end(),
                     [&](std::size_t a, std::size_t c) { return scores[a] > scores[c]; });
    b.selected.assign(b.ranking.begin(), b.ranking.begin() + static_cast<std::ptrdiff_t>(k));
    b.scores = std::move(scores);
    return b;
}

AcquisitionBatch select(const ModelBundle& model, const Tensor& pool, std::span<const std::uint64_t> window_ids,
                        const SelectOptions& options, const RngStream& base) {
    const std::size_t n = window_ids.size();
    if (n == 0 && options.eta > 0.0) throw std::invalid_argument("select: empty pool");
    std::vector<double> scores(n);
    if (options.function == Acquisition::random) {
        const RngStream r = base.derive("acquire.random");
        for (std::size_t i = 0; i < n; ++i) scores[i] = random_score(r.derive(window_ids[i]));
    } else if (n > 0) {
        const auto samples = predict_mc(model, pool, window_ids, options.passes, base.derive("acquire.mc"));
        for (std::size_t i = 0; i < n; ++i) scores[i] = acquisition_score(options.function, samples[i]);
    }
    return rank_scores(std::move(scores), options.eta, options.function);
}

}  // namespace bal
