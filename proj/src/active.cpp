#include "bal/active.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace bal {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---------------------------------------------------------------- plan

void ExperimentPlan::validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("plan: " + m); };
    if (!(pool_fraction > 0.0 && pool_fraction < 1.0)) bad("pool_fraction must lie in (0, 1)");
    if (baseline_epochs < 1 || incremental_epochs < 1) bad("epochs must be >= 1");
    if (passes < 1) bad("passes must be >= 1");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (rounds < 1) bad("rounds must be >= 1");
    if (seeds.empty()) bad("at least one seed is required");
    if (functions.empty()) bad("at least one acquisition function is required");
    for (double e : eta_grid)
        if (!(e >= 0.0 && e <= 1.0)) bad("eta values must lie in [0, 1]");
    if (!(label_noise >= 0.0 && label_noise <= 1.0)) bad("label_noise must lie in [0, 1]");
    if (pool_cap_seconds < 0.0) bad("pool_cap_seconds must be >= 0");
}

void to_json(json& j, const ExperimentPlan& p) {
    std::vector<std::string> fns;
    for (auto f : p.functions) fns.emplace_back(to_string(f));
    j = json{{"dataset_id", p.dataset_id},
             {"users", p.users},
             {"pool_fraction", p.pool_fraction},
             {"eta_grid", p.eta_grid},
             {"functions", fns},
             {"baseline_epochs", p.baseline_epochs},
             {"incremental_epochs", p.incremental_epochs},
             {"passes", p.passes},
             {"batch_size", p.batch_size},
             {"seeds", p.seeds},
             {"baseline_seed", p.baseline_seed},
             {"rounds", p.rounds},
             {"replay", p.replay},
             {"pool_cap_windows", p.pool_cap_windows},
             {"pool_cap_seconds", p.pool_cap_seconds},
             {"label_noise", p.label_noise},
             {"standardize", p.standardize},
             {"model", p.model}};
}

void from_json(const json& j, ExperimentPlan& p) {
    ExperimentPlan d;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("dataset_id", d.dataset_id);
    get("users", d.users);
    get("pool_fraction", d.pool_fraction);
    get("eta_grid", d.eta_grid);
    if (j.contains("functions")) {
        d.functions.clear();
        for (const auto& f : j.at("functions")) d.functions.push_back(parse_acquisition(f.get<std::string>()));
    }
    get("baseline_epochs", d.baseline_epochs);
    get("incremental_epochs", d.incremental_epochs);
    get("passes", d.passes);
    get("batch_size", d.batch_size);
    get("seeds", d.seeds);
    get("baseline_seed", d.baseline_seed);
    get("rounds", d.rounds);
    get("replay", d.replay);
    get("pool_cap_windows", d.pool_cap_windows);
    get("pool_cap_seconds", d.pool_cap_seconds);
    get("label_noise", d.label_noise);
    get("standardize", d.standardize);
    get("model", d.model);
    p = d;
}

// ---------------------------------------------------------------- metrics

void to_json(json& j, const Metrics& m) {
    j = json{{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"per_class_f1", m.per_class_f1},
             {"confusion", m.confusion}};
}

Metrics compute_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                        std::size_t num_classes) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("compute_metrics: length mismatch");
    Metrics m;
    m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) ++m.confusion.at(truth[i]).at(predicted[i]);
    std::size_t correct = 0;
    for (std::size_t c = 0; c < num_classes; ++c) correct += m.confusion[c][c];
    m.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());

    m.per_class_f1.assign(num_classes, 0.0);
    double f1_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t fp = 0, fn = 0;
        for (std::size_t k = 0; k < num_classes; ++k) {
            if (k == c) continue;
            fp += m.confusion[k][c];
            fn += m.confusion[c][k];
        }
        const std::size_t tp = m.confusion[c][c];
        if (tp + fp + fn == 0) continue;
        m.per_class_f1[c] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        f1_sum += m.per_class_f1[c];
        ++present;
    }
    m.macro_f1 = present ? f1_sum / static_cast<double>(present) : 0.0;
    return m;
}

Metrics evaluate(const ModelBundle& model, const Tensor& x, std::span<const std::size_t> labels,
                 std::span<const std::uint64_t> ids, std::size_t passes, const RngStream& rng) {
    const std::size_t C = model.config().num_classes;
    std::vector<std::size_t> pred(labels.size());
    if (!labels.empty()) {
        const auto samples = predict_mc(model, x, ids, passes, rng);
        for (std::size_t i = 0; i < samples.size(); ++i)
            pred[i] = static_cast<std::size_t>(std::max_element(samples[i].mean.begin(), samples[i].mean.end()) -
                                               samples[i].mean.begin());
    }
    return compute_metrics(labels, pred, C);
}

// ---------------------------------------------------------------- data plumbing

PoolTestSplit split_pool_test(std::size_t n, double pool_fraction, RngStream rng) {
    if (n < 2) throw std::invalid_argument("split_pool_test: need at least 2 windows, got " + std::to_string(n));
    if (!(pool_fraction > 0.0 && pool_fraction < 1.0))
        throw std::invalid_argument("split_pool_test: pool_fraction must lie in (0, 1)");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    auto k = static_cast<std::size_t>(std::ceil(pool_fraction * static_cast<double>(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n - 1);
    return {{order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)},
            {order.begin() + static_cast<std::ptrdiff_t>(k), order.end()}};
}

WindowSet WindowSet::gather(const UserWindows& w, std::span<const std::size_t> rows) {
    WindowSet s;
    if (rows.empty()) return s;
    const std::size_t A = w.features.dim(1), L = w.features.dim(2), row = A * L;
    s.x = Tensor({rows.size(), A, L});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(&w.features[rows[i] * row], row, &s.x[i * row]);
        s.y.push_back(w.labels.at(rows[i]));
        s.ids.push_back(w.window_ids.at(rows[i]));
    }
    return s;
}

WindowSet WindowSet::concat(std::span<const WindowSet> parts) {
    WindowSet s;
    std::size_t n = 0;
    Shape shape;
    for (const auto& p : parts)
        if (p.size() > 0) {
            n += p.size();
            shape = p.x.shape();
        }
    if (n == 0) return s;
    shape[0] = n;
    std::vector<double> data;
    data.reserve(shape_size(shape));
    for (const auto& p : parts) {
        if (p.size() == 0) continue;
        data.insert(data.end(), p.x.data().begin(), p.x.data().end());
        s.y.insert(s.y.end(), p.y.begin(), p.y.end());
        s.ids.insert(s.ids.end(), p.ids.begin(), p.ids.end());
    }
    s.x = Tensor(shape, std::move(data));
    return s;
}

void train_epochs(ModelBundle& model, const WindowSet& data, std::size_t epochs, std::size_t batch_size,
                  const RngStream& rng) {
    const std::size_t n = data.size();
    if (n == 0) return;
    const std::size_t A = data.x.dim(1), L = data.x.dim(2), row = A * L;
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        RngStream shuffle_rng = rng.derive({hash_name("shuffle"), epoch});
        shuffle(order, shuffle_rng);
        const RngStream dropout = rng.derive({hash_name("dropout"), epoch});
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t m = std::min(batch_size, n - start);
            Tensor xb({m, A, L});
            std::vector<std::size_t> yb(m);
            std::vector<RngStream> rngs(m);
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t i = order[start + k];
                std::copy_n(&data.x[i * row], row, &xb[k * row]);
                yb[k] = data.y[i];
                rngs[k] = dropout.derive(data.ids[i]);
            }
            model.train_batch(xb, yb, rngs);
        }
    }
}

WindowSet training_windows(const WindowStore& store, const std::string& held_out) {
    std::vector<WindowSet> parts;
    for (const auto& [id, w] : store.users) {
        if (id == held_out || w.size() == 0) continue;
        std::vector<std::size_t> rows(w.size());
        std::iota(rows.begin(), rows.end(), 0);
        parts.push_back(WindowSet::gather(w, rows));
    }
    return WindowSet::concat(parts);
}

namespace {

HarnetConfig config_for(const WindowStore& store, const ExperimentPlan& plan) {
    HarnetConfig c = plan.model;
    c.num_classes = store.classes.size();
    c.input_length = store.feature_length();
    return c;
}

}  // namespace

ModelBundle train_baseline(const WindowStore& store, const std::string& held_out, const ExperimentPlan& plan) {
    const WindowSet data = training_windows(store, held_out);
    if (data.size() == 0) throw std::invalid_argument("no training windows outside user " + held_out);
    const RngStream root(plan.baseline_seed, hash_name("baseline"));
    auto model = ModelBundle::build(config_for(store, plan), root.derive({hash_name("init"), hash_name(held_out)}).next_u64());
    if (plan.standardize) {
        const auto s = fit_axis_stats(data.x);
        model.scaler() = InputScaler{s.mean, s.inv_std};
    }
    train_epochs(model, data, plan.baseline_epochs, plan.batch_size, root.derive({hash_name("train"), hash_name(held_out)}));
    model.round_to_storage();
    return model;
}

std::vector<BaselineResult> train_baseline_loocv(const WindowStore& store, const ExperimentPlan& plan,
                                                 const std::function<void(const std::string&)>& log) {
    plan.validate();
    if (store.users.size() < 2) throw std::invalid_argument("leave-one-user-out needs at least 2 users");
    const auto users = plan.users.empty() ? store.user_ids() : plan.users;
    std::vector<BaselineResult> out;
    for (const auto& user : users) {
        const auto it = store.users.find(user);
        if (it == store.users.end()) throw std::invalid_argument("unknown user '" + user + "'");
        if (it->second.size() < 2) {
            if (log) log("skipping user " + user + ": fewer than 2 windows");
            continue;
        }
        const auto start = Clock::now();
        BaselineResult r;
        r.user = user;
        r.model = train_baseline(store, user, plan);
        r.train_seconds = seconds_since(start);
        r.train_windows = training_windows(store, user).size();
        const auto split = split_pool_test(it->second.size(), plan.pool_fraction,
                                           RngStream(plan.baseline_seed, hash_name("split")).derive(hash_name(user)));
        const auto test = WindowSet::gather(it->second, split.test);
        r.test_windows = test.size();
        r.metrics = evaluate(r.model, test.x, test.y, test.ids, plan.passes,
                             RngStream(plan.baseline_seed, hash_name("evaluate")).derive(hash_name(user)));
        if (log)
            log("baseline " + user + ": accuracy " + std::to_string(r.metrics.accuracy) + ", macro f1 " +
                std::to_string(r.metrics.macro_f1));
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- oracle

SimulatedOracle::SimulatedOracle(std::map<std::uint64_t, std::size_t> truth, std::size_t num_classes, double noise,
                                 RngStream rng)
    : truth_(std::move(truth)), num_classes_(num_classes), noise_(noise), rng_(rng) {}

std::optional<std::size_t> SimulatedOracle::label(std::uint64_t window_id) {
    const auto it = truth_.find(window_id);
    if (it == truth_.end()) return std::nullopt;
    if (noise_ <= 0.0 || num_classes_ < 2) return it->second;
    RngStream r = rng_.derive(window_id);
    if (r.uniform() >= noise_) return it->second;
    const auto k = static_cast<std::size_t>(r.below(num_classes_ - 1));
    return k < it->second ? k : k + 1;
}

// ---------------------------------------------------------------- cells

CellContext::CellContext(const WindowStore& store, const std::string& user, const ModelBundle& baseline,
                         const ExperimentPlan& plan, std::uint64_t seed, const WindowSet* replay_set)
    : baseline_(&baseline), plan_(&plan), replay_(replay_set), user_(user), seed_(seed),
      num_classes_(store.classes.size()) {
    plan.validate();
    const auto it = store.users.find(user);
    if (it == store.users.end()) throw std::invalid_argument("unknown user '" + user + "'");
    const auto& w = it->second;
    const auto split = split_pool_test(w.size(), plan.pool_fraction, stream("split"));

    std::size_t cap = plan.pool_cap_windows;
    if (plan.pool_cap_seconds > 0.0) {
        const double ws = store.provenance.at("preprocessing").at("window_seconds").get<double>();
        const auto by_time = static_cast<std::size_t>(std::floor(plan.pool_cap_seconds / ws + 1e-9));
        cap = cap ? std::min(cap, by_time) : by_time;
    }
    pool_rows_ = split.pool;
    if (cap && cap < pool_rows_.size()) {
        // Keep the most recent windows (highest store rows), in split order.
        auto sorted = pool_rows_;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t threshold = sorted[sorted.size() - cap];
        std::erase_if(pool_rows_, [&](std::size_t r) { return r < threshold; });
    }
    pool_ = WindowSet::gather(w, pool_rows_);
    test_ = WindowSet::gather(w, split.test);
}

RngStream CellContext::stream(std::string_view purpose) const {
    return RngStream(seed_, hash_name(purpose)).derive(hash_name(user_));
}

const Metrics& CellContext::pre() const {
    if (!pre_) pre_ = evaluate(*baseline_, test_.x, test_.y, test_.ids, plan_->passes, stream("evaluate"));
    return *pre_;
}

AcquisitionBatch CellContext::select(double eta, Acquisition fn) const {
    const RngStream base = stream("acquire");
    std::vector<double> scores(pool_.size());
    if (fn == Acquisition::random) {
        const RngStream r = base.derive("acquire.random");
        for (std::size_t i = 0; i < pool_.size(); ++i) scores[i] = random_score(r.derive(pool_.ids[i]));
    } else if (pool_.size() > 0) {
        if (!samples_) samples_ = predict_mc(*baseline_, pool_.x, pool_.ids, plan_->passes, base.derive("acquire.mc"));
        for (std::size_t i = 0; i < pool_.size(); ++i) scores[i] = acquisition_score(fn, (*samples_)[i]);
    }
    return rank_scores(std::move(scores), eta, fn);
}

namespace {

WindowSet labeled_rows(const WindowSet& pool, std::span<const std::pair<std::size_t, std::size_t>> labels) {
    WindowSet s;
    if (labels.empty()) return s;
    const std::size_t A = pool.x.dim(1), L = pool.x.dim(2), row = A * L;
    s.x = Tensor({labels.size(), A, L});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto [idx, cls] = labels[i];
        std::copy_n(&pool.x[idx * row], row, &s.x[i * row]);
        s.y.push_back(cls);
        s.ids.push_back(pool.ids.at(idx));
    }
    return s;
}

void fine_tune(ModelBundle& model, const WindowSet& acquired, const WindowSet* replay, const ExperimentPlan& plan,
               const RngStream& rng) {
    model.optimizer().reset();
    if (replay && replay->size() > 0) {
        const WindowSet parts[] = {acquired, *replay};
        train_epochs(model, WindowSet::concat(parts), plan.incremental_epochs, plan.batch_size, rng);
    } else {
        train_epochs(model, acquired, plan.incremental_epochs, plan.batch_size, rng);
    }
    model.round_to_storage();
}

}  // namespace

CellResult CellContext::finish(double eta, Acquisition fn, const AcquisitionBatch& batch,
                               std::span<const std::pair<std::size_t, std::size_t>> labels, std::size_t skipped,
                               ModelBundle* updated) const {
    CellResult r;
    r.user = user_;
    r.eta = eta;
    r.function = fn;
    r.seed = seed_;
    r.pre = pre();
    r.requested = batch.selected.size();
    r.acquired = labels.size();
    r.skipped = skipped;
    for (const auto& [idx, cls] : labels) {
        if (idx >= pool_.size() || cls >= num_classes_)
            throw std::invalid_argument("finish: label for pool index " + std::to_string(idx) + " is out of range");
        r.acquired_ids.push_back(pool_.ids[idx]);
    }
    if (labels.empty()) {
        r.post = r.pre;
        if (updated) *updated = *baseline_;
        return r;
    }
    const auto start = Clock::now();
    ModelBundle model = *baseline_;
    fine_tune(model, labeled_rows(pool_, labels), replay_, *plan_, stream("finetune"));
    r.train_seconds = seconds_since(start);
    r.post = evaluate(model, test_.x, test_.y, test_.ids, plan_->passes, stream("evaluate"));
    if (updated) *updated = std::move(model);
    return r;
}

CellResult CellContext::run(double eta, Acquisition fn, Oracle& oracle, ModelBundle* updated) const {
    auto start = Clock::now();
    const AcquisitionBatch batch = select(eta, fn);
    const double score_seconds = seconds_since(start);

    if (plan_->rounds <= 1) {
        std::vector<std::pair<std::size_t, std::size_t>> labels;
        std::size_t skipped = 0;
        for (auto idx : batch.selected) {
            if (const auto l = oracle.label(pool_.ids[idx]); l && *l < num_classes_) labels.emplace_back(idx, *l);
            else ++skipped;
        }
        CellResult r = finish(eta, fn, batch, labels, skipped, updated);
        r.score_seconds = score_seconds;
        return r;
    }

    // Iterative: acquire the same total in plan.rounds steps, rescoring the
    // remaining pool with the current model after every fine-tune.
    CellResult r;
    r.user = user_;
    r.eta = eta;
    r.function = fn;
    r.seed = seed_;
    r.phase = "iterative";
    r.pre = pre();
    r.score_seconds = score_seconds;
    const std::size_t total = batch.selected.size();
    r.requested = total;
    ModelBundle model = *baseline_;
    std::vector<bool> taken(pool_.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> labels;
    std::size_t requested = 0;
    const RngStream acquire = stream("acquire");
    for (std::size_t round = 1; round <= plan_->rounds; ++round) {
        const std::size_t target = (total * round + plan_->rounds - 1) / plan_->rounds;
        if (target == requested) continue;
        std::vector<std::size_t> order;
        if (round == 1) {
            order = batch.ranking;
        } else {
            start = Clock::now();
            std::vector<std::size_t> remaining;
            for (std::size_t i = 0; i < pool_.size(); ++i)
                if (!taken[i]) remaining.push_back(i);
            const WindowSet rest = WindowSet::gather(
                UserWindows{user_, pool_.x, Tensor(), pool_.y, pool_.ids, std::vector<std::string>(pool_.size())},
                remaining);
            std::vector<double> scores(remaining.size());
            if (fn == Acquisition::random) {
                const RngStream rr = acquire.derive("acquire.random").derive(round);
                for (std::size_t i = 0; i < remaining.size(); ++i) scores[i] = random_score(rr.derive(rest.ids[i]));
            } else {
                const auto s = predict_mc(model, rest.x, rest.ids, plan_->passes,
                                          acquire.derive("acquire.mc").derive(round));
                for (std::size_t i = 0; i < remaining.size(); ++i) scores[i] = acquisition_score(fn, s[i]);
            }
            for (auto i : rank_scores(std::move(scores), 1.0, fn).ranking) order.push_back(remaining[i]);
            r.score_seconds += seconds_since(start);
        }
        for (auto idx : order) {
            if (requested == target) break;
            if (taken[idx]) continue;
            taken[idx] = true;
            ++requested;
            if (const auto l = oracle.label(pool_.ids[idx]); l && *l < num_classes_) {
                labels.emplace_back(idx, *l);
                r.acquired_ids.push_back(pool_.ids[idx]);
            } else {
                ++r.skipped;
            }
        }
        if (labels.empty()) continue;
        start = Clock::now();
        fine_tune(model, labeled_rows(pool_, labels), replay_, *plan_, stream("finetune").derive(round));
        r.train_seconds += seconds_since(start);
    }
    r.acquired = labels.size();
    r.post = labels.empty() ? r.pre : evaluate(model, test_.x, test_.y, test_.ids, plan_->passes, stream("evaluate"));
    if (updated) *updated = std::move(model);
    return r;
}

SimulatedOracle CellContext::simulated_oracle() const {
    std::map<std::uint64_t, std::size_t> truth;
    for (std::size_t i = 0; i < pool_.size(); ++i) truth.emplace(pool_.ids[i], pool_.y[i]);
    return SimulatedOracle(std::move(truth), num_classes_, plan_->label_noise, stream("oracle"));
}

std::vector<CellResult> sweep(const WindowStore& store, const ExperimentPlan& plan,
                              const std::function<const ModelBundle*(const std::string&)>& lookup,
                              const std::function<void(const std::string&)>& log) {
    plan.validate();
    const auto users = plan.users.empty() ? store.user_ids() : plan.users;
    std::vector<CellResult> cells;
    for (const auto& user : users) {
        const ModelBundle* baseline = lookup ? lookup(user) : nullptr;
        ModelBundle trained;
        std::string user_error;
        try {
            if (!baseline) {
                if (log) log("training baseline for " + user);
                trained = train_baseline(store, user, plan);
                baseline = &trained;
            }
        } catch (const std::exception& e) {
            user_error = e.what();
        }
        const WindowSet replay = plan.replay && user_error.empty() ? training_windows(store, user) : WindowSet{};
        for (auto seed : plan.seeds) {
            std::optional<CellContext> ctx;
            std::string seed_error = user_error;
            if (seed_error.empty()) {
                try {
                    ctx.emplace(store, user, *baseline, plan, seed, plan.replay ? &replay : nullptr);
                } catch (const std::exception& e) {
                    seed_error = e.what();
                }
            }
            for (auto fn : plan.functions)
                for (double eta : plan.eta_grid) {
                    CellResult r;
                    r.user = user;
                    r.eta = eta;
                    r.function = fn;
                    r.seed = seed;
                    r.phase = plan.rounds > 1 ? "iterative" : "single-shot";
                    if (!seed_error.empty()) {
                        r.error = seed_error;
                    } else {
                        try {
                            auto oracle = ctx->simulated_oracle();
                            r = ctx->run(eta, fn, oracle);
                        } catch (const std::exception& e) {
                            r.error = e.what();
                        }
                    }
                    if (log)
                        log(user + " seed " + std::to_string(seed) + " " + std::string(to_string(fn)) + " eta " +
                            std::to_string(eta) + ": " +
                            (r.error.empty() ? "accuracy " + std::to_string(r.post.accuracy) : "error " + r.error));
                    cells.push_back(std::move(r));
                }
        }
    }
    return cells;
}

// ---------------------------------------------------------------- reports

namespace {

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string f1_list(const std::vector<double>& f) {
    std::string s;
    for (std::size_t i = 0; i < f.size(); ++i) s += (i ? "," : "") + num(f[i]);
    return s;
}

std::string clean(std::string s) {
    for (auto& c : s)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

std::string results_table(std::span<const CellResult> cells, bool timing) {
    std::string out =
        "user\teta\tfunction\tseed\tphase\taccuracy\tmacro_f1\tper_class_f1\tbaseline_accuracy\tbaseline_macro_f1\t"
        "acquired\tskipped\terror";
    if (timing) out += "\tscore_seconds\ttrain_seconds";
    out += "\n";
    for (const auto& c : cells) {
        out += c.user + "\t" + num(c.eta) + "\t" + std::string(to_string(c.function)) + "\t" + std::to_string(c.seed) +
               "\t" + c.phase + "\t";
        if (c.error.empty())
            out += num(c.post.accuracy) + "\t" + num(c.post.macro_f1) + "\t" + f1_list(c.post.per_class_f1) + "\t" +
                   num(c.pre.accuracy) + "\t" + num(c.pre.macro_f1);
        else
            out += "\t\t\t\t";
        out += "\t" + std::to_string(c.acquired) + "\t" + std::to_string(c.skipped) + "\t" + clean(c.error);
        if (timing) out += "\t" + num(c.score_seconds) + "\t" + num(c.train_seconds);
        out += "\n";
    }
    return out;
}

json sweep_summary(std::span<const CellResult> cells) {
    struct Acc {
        double acc = 0.0, f1 = 0.0, pre = 0.0;
        std::size_t n = 0;
    };
    std::map<std::string, std::map<double, Acc>> by_fn;
    std::map<std::string, std::map<std::string, std::map<double, Acc>>> by_user;
    std::size_t failed = 0;
    for (const auto& c : cells) {
        if (!c.error.empty()) {
            ++failed;
            continue;
        }
        for (auto* a : {&by_fn[std::string(to_string(c.function))][c.eta],
                        &by_user[c.user][std::string(to_string(c.function))][c.eta]}) {
            a->acc += c.post.accuracy;
            a->f1 += c.post.macro_f1;
            a->pre += c.pre.accuracy;
            ++a->n;
        }
    }
    auto rows = [](const std::map<double, Acc>& m) {
        json arr = json::array();
        for (const auto& [eta, a] : m)
            arr.push_back({{"eta", eta},
                           {"mean_accuracy", a.acc / double(a.n)},
                           {"mean_macro_f1", a.f1 / double(a.n)},
                           {"mean_baseline_accuracy", a.pre / double(a.n)},
                           {"cells", a.n}});
        return arr;
    };
    json j{{"cells", cells.size()}, {"failed_cells", failed}};
    for (const auto& [fn, m] : by_fn) j["functions"][fn] = rows(m);
    for (const auto& [user, fns] : by_user)
        for (const auto& [fn, m] : fns) j["users"][user][fn] = rows(m);
    return j;
}

std::string baseline_table(std::span<const BaselineResult> results) {
    std::string out = "user\tphase\taccuracy\tmacro_f1\tper_class_f1\ttrain_windows\ttest_windows\ttrain_seconds\n";
    for (const auto& r : results)
        out += r.user + "\tbaseline\t" + num(r.metrics.accuracy) + "\t" + num(r.metrics.macro_f1) + "\t" +
               f1_list(r.metrics.per_class_f1) + "\t" + std::to_string(r.train_windows) + "\t" +
               std::to_string(r.test_windows) + "\t" + num(r.train_seconds) + "\n";
    return out;
}

// ---------------------------------------------------------------- timing

BenchReport bench_timing(const ModelBundle& model, const UserWindows& windows, double rate_hz,
                         const ExperimentPlan& plan, std::size_t repeats) {
    const std::size_t n = windows.size();
    if (n < 10) throw std::invalid_argument("bench: need at least 10 windows, got " + std::to_string(n));
    repeats = std::max<std::size_t>(repeats, 1);
    BenchReport r;
    r.pool_windows = n;
    r.passes = plan.passes;
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    const WindowSet set = WindowSet::gather(windows, all);
    const std::size_t L = windows.display.dim(2);
    constexpr int kInner = 50;
    volatile double sink = 0.0;

    std::vector<double> inference, dwt, dec;
    const std::size_t sample = std::min<std::size_t>(n, 20);
    for (std::size_t i = 0; i < sample; ++i) {
        const std::size_t row = 3 * windows.features.dim(2);
        Tensor x({1, 3, windows.features.dim(2)},
                 std::vector<double>(&windows.features[i * row], &windows.features[i * row] + row));
        auto start = Clock::now();
        sink = sink + model.predict(x, Mode::deterministic_eval)[0];
        inference.push_back(seconds_since(start));

        SensorWindow w;
        w.rate_hz = rate_hz;
        SensorWindow fast;
        fast.rate_hz = 2.0 * rate_hz;
        for (std::size_t a = 0; a < 3; ++a) {
            const double* src = &windows.display[(i * 3 + a) * L];
            w.axes[a].assign(src, src + L);
            for (std::size_t l = 0; l < L; ++l) {
                fast.axes[a].push_back(src[l]);
                fast.axes[a].push_back(src[l]);
            }
        }
        start = Clock::now();
        for (int k = 0; k < kInner; ++k) sink = sink + dwt_approx(w).coefficients[0][0];
        dwt.push_back(seconds_since(start) / kInner);
        start = Clock::now();
        for (int k = 0; k < kInner; ++k) sink = sink + decimate(fast, rate_hz).axes[0][0];
        dec.push_back(seconds_since(start) / kInner);
    }
    r.inference_per_window = median(inference);
    r.dwt_per_window = median(dwt);
    r.decimation_per_window = median(dec);

    std::vector<double> epochs, passes, totals;
    const RngStream base(plan.baseline_seed, hash_name("bench"));
    for (std::size_t k = 0; k < repeats; ++k) {
        ModelBundle m = model;
        m.optimizer().reset();
        auto start = Clock::now();
        train_epochs(m, set, 1, plan.batch_size, base.derive({hash_name("epoch"), k}));
        epochs.push_back(seconds_since(start));

        start = Clock::now();
        sink = sink + predict_mc(model, set.x, set.ids, 1, base.derive({hash_name("pass"), k}), false)[0].mean[0];
        passes.push_back(seconds_since(start));
    }
    for (std::size_t k = 0; k < repeats; ++k) {
        const auto start = Clock::now();
        const auto s = predict_mc(model, set.x, set.ids, plan.passes, base.derive({hash_name("acquire"), k}), false);
        std::vector<double> scores(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) scores[i] = variation_ratio(s[i]);
        const auto batch = rank_scores(std::move(scores), 0.5, Acquisition::variation_ratio);
        totals.push_back(seconds_since(start));
        sink = sink + static_cast<double>(batch.selected.size());
    }
    r.epoch = median(epochs);
    r.stochastic_pass = median(passes);
    r.acquisition_total = median(totals);
    return r;
}

json to_json(const BenchReport& r) {
    return json{{"inference_per_window_seconds", r.inference_per_window},
                {"dwt_per_window_seconds", r.dwt_per_window},
                {"decimation_per_window_seconds", r.decimation_per_window},
                {"incremental_epoch_seconds", r.epoch},
                {"stochastic_pass_seconds", r.stochastic_pass},
                {"acquisition_total_seconds", r.acquisition_total},
                {"pool_windows", r.pool_windows},
                {"passes", r.passes}};
}

}  // namespace bal
