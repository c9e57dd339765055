#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bal/harnet.hpp"
#include "bal/rng.hpp"
#include "bal/tensor.hpp"

namespace bal {

/// T stochastic passes for one window: per_pass is [T, C], mean the
/// arithmetic mean over passes.
struct PredictiveSample {
    Tensor per_pass;
    std::vector<double> mean;

    /// Computes the mean from the rows. When every row is identical the mean
    /// is that row exactly (no rounding from summation).
    static PredictiveSample from_passes(Tensor per_pass);

    std::size_t passes() const { return per_pass.dim(0); }
    std::size_t classes() const { return per_pass.dim(1); }
    std::span<const double> pass(std::size_t t) const { return per_pass.data().subspan(t * classes(), classes()); }

    friend bool operator==(const PredictiveSample&, const PredictiveSample&) = default;
};

enum class Acquisition { max_entropy, bald, variation_ratio, random };

/// Names used on the command line and in result tables:
/// maxentropy, bald, varratio, random.
std::string_view to_string(Acquisition fn);
Acquisition parse_acquisition(std::string_view name);

/// Shannon entropy in nats with the probability floor applied inside log.
double entropy(std::span<const double> p);

double max_entropy(const PredictiveSample& s);
/// H(mean) - mean_t H(pass t), accumulated as mean_t (H(mean) - H(pass t)) so
/// identical passes give exactly 0.
double bald(const PredictiveSample& s);
double variation_ratio(const PredictiveSample& s);
/// Uniform [0, 1) score for a window, from the window's own stream.
double random_score(RngStream rng);

/// Score of a non-random acquisition function.
double acquisition_score(Acquisition fn, const PredictiveSample& s);

/// T stochastic-eval passes per window of x [N, axes, L]. The dropout mask for
/// window n in pass t comes from base.derive({window_ids[n], t}), so results do
/// not depend on batching or evaluation order. With share_trunk the
/// deterministic layers before the first dropout run once per window; the
/// result is bit-identical to running T full passes.
std::vector<PredictiveSample> predict_mc(const ModelBundle& model, const Tensor& x,
                                         std::span<const std::uint64_t> window_ids, std::size_t T,
                                         const RngStream& base, bool share_trunk = true);

/// ceil(eta * pool_size), eta in [0, 1].
std::size_t acquisition_count(double eta, std::size_t pool_size);

struct AcquisitionBatch {
    std::vector<double> scores;
    std::vector<std::size_t> ranking;
    std::vector<std::size_t> selected;
    double eta = 0.0;
    Acquisition function = Acquisition::random;
};

/// Stable descending ranking (ties by ascending index) and top-k selection.
AcquisitionBatch rank_scores(std::vector<double> scores, double eta, Acquisition fn);

struct SelectOptions {
    Acquisition function = Acquisition::variation_ratio;
    double eta = 0.0;
    std::size_t passes = 10;
};

/// Scores every pool window and selects ceil(eta * |pool|) of them. MC passes
/// draw from base.derive("acquire.mc"), random scores from
/// base.derive("acquire.random").derive(window_id).
AcquisitionBatch select(const ModelBundle& model, const Tensor& pool, std::span<const std::uint64_t> window_ids,
                        const SelectOptions& options, const RngStream& base);

}  // namespace bal
