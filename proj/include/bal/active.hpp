#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "bal/acquire.hpp"
#include "bal/data.hpp"
#include "bal/harnet.hpp"

namespace bal {

/// Everything that defines an experiment besides the data.
struct ExperimentPlan {
    std::string dataset_id;
    /// Users to hold out in turn; empty means every user in the store.
    std::vector<std::string> users;
    double pool_fraction = 0.7;
    std::vector<double> eta_grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<Acquisition> functions{Acquisition::variation_ratio};
    std::size_t baseline_epochs = 50;
    std::size_t incremental_epochs = 10;
    std::size_t passes = 10;
    std::size_t batch_size = 32;
    /// Seeds of the per-cell randomness (split, acquisition, fine-tuning).
    std::vector<std::uint64_t> seeds{1};
    /// Seed of baseline initialization and training.
    std::uint64_t baseline_seed = 1;
    /// Repeat score -> acquire -> train in this many rounds (1: single shot).
    std::size_t rounds = 1;
    /// Mix the baseline's training windows into fine-tuning batches.
    bool replay = false;
    /// Keep at most this many of the most recent pool windows (0: no cap).
    std::size_t pool_cap_windows = 0;
    /// Same cap expressed in seconds of recording (0: no cap).
    double pool_cap_seconds = 0.0;
    /// Probability that the simulated oracle answers a wrong class.
    double label_noise = 0.0;
    /// Per-axis standardization fitted on the baseline training windows.
    bool standardize = false;
    HarnetConfig model;

    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentPlan& p);
void from_json(const nlohmann::json& j, ExperimentPlan& p);

struct Metrics {
    double accuracy = 0.0;
    /// Mean F1 over classes that occur in the truth or the predictions.
    double macro_f1 = 0.0;
    std::vector<double> per_class_f1;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

    friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// {accuracy, macro_f1, per_class_f1, confusion}
void to_json(nlohmann::json& j, const Metrics& m);

Metrics compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                        std::size_t num_classes);

/// Argmax of the T-pass MC mean for every window, then metrics.
Metrics evaluate(const ModelBundle& model, const Tensor& x, std::span<const std::size_t> labels,
                 std::span<const std::uint64_t> ids, std::size_t passes, const RngStream& rng);

/// Indices into a user's windows.
struct PoolTestSplit {
    std::vector<std::size_t> pool;
    std::vector<std::size_t> test;
};

/// Seeded shuffle; the first ceil(fraction * n) go to the pool.
PoolTestSplit split_pool_test(std::size_t n, double pool_fraction, RngStream rng);

/// Rows of a labeled window set.
struct WindowSet {
    Tensor x;
    std::vector<std::size_t> y;
    std::vector<std::uint64_t> ids;

    std::size_t size() const noexcept { return ids.size(); }
    static WindowSet gather(const UserWindows& w, std::span<const std::size_t> rows);
    static WindowSet concat(std::span<const WindowSet> parts);
};

/// Mini-batch training. Batch order comes from rng.derive({"shuffle", epoch});
/// the dropout stream of a window is rng.derive({"dropout", epoch, id}).
void train_epochs(ModelBundle& model, const WindowSet& data, std::size_t epochs, std::size_t batch_size,
                  const RngStream& rng);

/// Every window of every user except `held_out`, in user order.
WindowSet training_windows(const WindowStore& store, const std::string& held_out);

/// Fresh model trained on training_windows(store, held_out).
ModelBundle train_baseline(const WindowStore& store, const std::string& held_out, const ExperimentPlan& plan);

struct BaselineResult {
    std::string user;
    ModelBundle model;
    Metrics metrics;
    std::size_t train_windows = 0;
    std::size_t test_windows = 0;
    double train_seconds = 0.0;
};

/// Leave-one-user-out: one baseline per held-out user, evaluated on that
/// user's test split (seed plan.baseline_seed). Users without windows are
/// skipped with a warning through `log`.
std::vector<BaselineResult> train_baseline_loocv(const WindowStore& store, const ExperimentPlan& plan,
                                                 const std::function<void(const std::string&)>& log = {});

/// Label source for acquired windows. nullopt means the oracle declined.
class Oracle {
public:
    virtual ~Oracle() = default;
    virtual std::optional<std::size_t> label(std::uint64_t window_id) = 0;
};

/// Answers the hidden ground truth, flipped to a uniformly drawn wrong class
/// with probability `noise`. The draw for a window depends only on its id.
class SimulatedOracle : public Oracle {
public:
    SimulatedOracle(std::map<std::uint64_t, std::size_t> truth, std::size_t num_classes, double noise,
                    RngStream rng);
    std::optional<std::size_t> label(std::uint64_t window_id) override;

private:
    std::map<std::uint64_t, std::size_t> truth_;
    std::size_t num_classes_;
    double noise_;
    RngStream rng_;
};

/// Result of one (user, eta, function, seed) cell.
struct CellResult {
    std::string user;
    double eta = 0.0;
    Acquisition function = Acquisition::variation_ratio;
    std::uint64_t seed = 0;
    /// "single-shot" or "iterative".
    std::string phase = "single-shot";
    Metrics pre;
    Metrics post;
    std::size_t requested = 0;
    std::size_t acquired = 0;
    std::size_t skipped = 0;
    std::vector<std::uint64_t> acquired_ids;
    std::string error;
    double score_seconds = 0.0;
    double train_seconds = 0.0;
};

/// Shared state of all cells of one (user, seed): the baseline, the split,
/// pre-update metrics and cached MC samples of the pool.
class CellContext {
public:
    CellContext(const WindowStore& store, const std::string& user, const ModelBundle& baseline,
                const ExperimentPlan& plan, std::uint64_t seed, const WindowSet* replay_set = nullptr);

    const std::string& user() const noexcept { return user_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const WindowSet& pool() const noexcept { return pool_; }
    const WindowSet& test() const noexcept { return test_; }
    const ModelBundle& baseline() const noexcept { return *baseline_; }
    const ExperimentPlan& plan() const noexcept { return *plan_; }
    /// Pool rows of the user's windows (after the cap), for display payloads.
    const std::vector<std::size_t>& pool_rows() const noexcept { return pool_rows_; }
    const Metrics& pre() const;

    /// Scores the pool with the baseline and ranks it. MC samples are computed
    /// once and shared by every function and eta.
    AcquisitionBatch select(double eta, Acquisition fn) const;

    /// Fine-tunes a copy of the baseline on the labeled pool rows and
    /// evaluates it. Labels are (pool index, class) pairs in acquisition order.
    CellResult finish(double eta, Acquisition fn, const AcquisitionBatch& batch,
                      std::span<const std::pair<std::size_t, std::size_t>> labels, std::size_t skipped,
                      ModelBundle* updated = nullptr) const;

    /// Single-shot (or plan.rounds-step) protocol with the given oracle.
    CellResult run(double eta, Acquisition fn, Oracle& oracle, ModelBundle* updated = nullptr) const;

    /// Simulated oracle over this user's pool with plan.label_noise.
    SimulatedOracle simulated_oracle() const;

    RngStream stream(std::string_view purpose) const;

private:
    const ModelBundle* baseline_;
    const ExperimentPlan* plan_;
    const WindowSet* replay_;
    std::string user_;
    std::uint64_t seed_;
    std::size_t num_classes_;
    std::vector<std::size_t> pool_rows_;
    WindowSet pool_;
    WindowSet test_;
    mutable std::optional<Metrics> pre_;
    mutable std::optional<std::vector<PredictiveSample>> samples_;
};

/// Runs every (user, eta, function, seed) cell; baselines come from `lookup`
/// (or are trained when it returns nullptr). Failures are recorded per cell.
std::vector<CellResult> sweep(const WindowStore& store, const ExperimentPlan& plan,
                              const std::function<const ModelBundle*(const std::string&)>& lookup = {},
                              const std::function<void(const std::string&)>& log = {});

/// Tab-separated results table. Columns:
///   user eta function seed phase accuracy macro_f1 per_class_f1
///   baseline_accuracy baseline_macro_f1 acquired skipped error
///   score_seconds train_seconds
/// per_class_f1 is a comma-separated list. Numbers use 17 significant digits.
std::string results_table(std::span<const CellResult> cells, bool timing = true);

/// Mean accuracy / macro F1 per (function, eta) over users and seeds, plus
/// per-user means.
nlohmann::json sweep_summary(std::span<const CellResult> cells);

std::string baseline_table(std::span<const BaselineResult> results);

/// Wall-clock medians in seconds.
struct BenchReport {
    double inference_per_window = 0.0;
    double dwt_per_window = 0.0;
    double decimation_per_window = 0.0;
    double epoch = 0.0;
    double stochastic_pass = 0.0;
    double acquisition_total = 0.0;
    std::size_t pool_windows = 0;
    std::size_t passes = 0;
};

/// Times the pipeline stages on a user's windows. Decimation is timed on a
/// reconstruction of each window at twice the stored rate. The pool pass and
/// the acquisition use full forward passes (no trunk sharing) so that the
/// total is T passes.
BenchReport bench_timing(const ModelBundle& model, const UserWindows& windows, double rate_hz,
                         const ExperimentPlan& plan, std::size_t repeats = 5);

nlohmann::json to_json(const BenchReport& r);

}  // namespace bal
