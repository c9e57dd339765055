// bal: command-line driver for preprocessing, baselines, active-learning
// runs, sweeps, timing and the labeling service.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "bal/active.hpp"
#include "bal/binio.hpp"
#include "bal/oracle_service.hpp"
#include "bal/run_config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bal;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool quiet = false;

void log(const std::string& msg) {
    if (!quiet) std::cerr << "[bal] " << msg << std::endl;
}

json read_json(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw DataError(DataErrorCode::io, std::string("cannot open ") + what + " '" + path + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw UsageError(std::string(what) + " '" + path + "' is not valid JSON");
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

fs::path out_dir(const RunConfig& c) {
    const fs::path dir = c.paths.out.empty() ? fs::path("runs") / c.command : fs::path(c.paths.out);
    fs::create_directories(dir);
    return dir;
}

void write_config(const RunConfig& c, const fs::path& dir) {
    write_text(dir / "config.json", json(c).dump(2) + "\n");
}

WindowStore load_store(const RunConfig& c) {
    require(c.paths.store, "--store");
    if (!fs::exists(c.paths.store)) throw DataError(DataErrorCode::io, "store '" + c.paths.store + "' does not exist");
    log("loading store " + c.paths.store);
    return WindowStore::load(c.paths.store);
}

void check_model(const ModelBundle& m, const WindowStore& store, const std::string& path) {
    if (m.config().input_length != store.feature_length() || m.config().num_classes != store.classes.size())
        throw DataError(DataErrorCode::bad_manifest,
                        "model '" + path + "' expects " + std::to_string(m.config().num_classes) + " classes of length " +
                            std::to_string(m.config().input_length) + ", store has " +
                            std::to_string(store.classes.size()) + " of length " +
                            std::to_string(store.feature_length()));
}

ModelBundle load_model(const std::string& path, const WindowStore& store) {
    require(path, "--model");
    if (!fs::exists(path)) throw DataError(DataErrorCode::io, "model '" + path + "' does not exist");
    auto m = ModelBundle::load(path);
    check_model(m, store, path);
    return m;
}

const UserWindows& user_windows(const WindowStore& store, const std::string& user) {
    const auto it = store.users.find(user);
    if (it == store.users.end()) throw UsageError("unknown user '" + user + "'");
    return it->second;
}

double display_rate(const WindowStore& store, const UserWindows& w) {
    const double seconds = store.provenance.at("preprocessing").at("window_seconds").get<double>();
    return static_cast<double>(w.display.dim(2)) / seconds;
}

json cell_json(const CellResult& r) {
    std::vector<std::string> ids;
    for (auto id : r.acquired_ids) ids.push_back(std::to_string(id));
    return json{{"user", r.user},         {"eta", r.eta},
                {"function", to_string(r.function)}, {"seed", r.seed},
                {"phase", r.phase},       {"pre", r.pre},
                {"post", r.post},         {"requested", r.requested},
                {"acquired", r.acquired}, {"skipped", r.skipped},
                {"acquired_ids", ids},    {"error", r.error},
                {"score_seconds", r.score_seconds}, {"train_seconds", r.train_seconds}};
}

// ------------------------------------------------------------------ commands

int cmd_prep(RunConfig& c) {
    require(c.paths.manifest, "--manifest");
    require(c.paths.out, "--out");
    auto manifest = DatasetManifest::load(c.paths.manifest);
    if (c.seed && manifest.synthetic) manifest.synthetic->seed = *c.seed;
    log("ingesting " + manifest.dataset_id);
    const auto data = ingest(manifest);
    log("parsed " + std::to_string(data.rows_parsed) + " rows, skipped " + std::to_string(data.rows_skipped));
    PrepReport report;
    const auto store = preprocess_and_store(data, manifest, &report);
    const fs::path dir = c.paths.out;
    store.save(dir);
    write_config(c, dir);
    json summary{{"windows", report.windows},
                 {"discarded_windows", report.discarded_windows},
                 {"compression_ratio", report.compression_ratio},
                 {"feature_length", store.feature_length()},
                 {"classes", store.classes},
                 {"users", store.user_ids()}};
    log("wrote " + std::to_string(report.windows) + " windows to " + dir.string());
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_baseline(RunConfig& c) {
    const auto store = load_store(c);
    const auto dir = out_dir(c);
    write_config(c, dir);
    const auto results = train_baseline_loocv(store, c.plan, log);
    json metrics = json::array();
    for (const auto& r : results) {
        r.model.save(dir / "models" / (r.user + ".bal"));
        metrics.push_back({{"user", r.user},
                           {"metrics", r.metrics},
                           {"train_windows", r.train_windows},
                           {"test_windows", r.test_windows},
                           {"train_seconds", r.train_seconds}});
    }
    const auto table = baseline_table(results);
    write_text(dir / "baseline.tsv", table);
    write_text(dir / "baseline.json", metrics.dump(2) + "\n");
    std::cout << table;
    return 0;
}

int cmd_active(RunConfig& c) {
    const auto store = load_store(c);
    const auto model = load_model(c.paths.model, store);
    require(c.active.user, "--user");
    user_windows(store, c.active.user);
    const auto fn = parse_acquisition(c.active.function);
    if (!(c.active.eta >= 0.0 && c.active.eta <= 1.0)) throw UsageError("--eta must lie in [0, 1]");
    const std::uint64_t seed = c.plan.seeds.front();
    const auto dir = out_dir(c);
    write_config(c, dir);

    CellResult result;
    ModelBundle updated;
    if (c.active.oracle == "simulated") {
        const CellContext ctx(store, c.active.user, model, c.plan, seed);
        auto oracle = ctx.simulated_oracle();
        log("scoring " + std::to_string(ctx.pool().size()) + " pool windows");
        result = ctx.run(c.active.eta, fn, oracle, &updated);
    } else if (c.active.oracle == "http") {
        OracleService service(store, model, c.plan, seed);
        OracleServer server(service);
        const int port = server.start(c.http.host, c.http.port);
        const auto created = service.create_session(
            {{"eta", c.active.eta}, {"function", c.active.function}, {"user", c.active.user}});
        if (created.status != 201) throw std::runtime_error(created.body.value("error", std::string("session failed")));
        const std::string id = created.body["session_id"];
        log("session " + id + " with " + std::to_string(created.body["k"].get<std::size_t>()) +
            " tasks at http://" + c.http.host + ":" + std::to_string(port) + "/session/" + id);
        while (!service.wait(id, std::chrono::seconds(5))) {
        }
        server.stop();
        const auto r = service.result(id);
        if (!r) throw std::runtime_error(service.status(id).body.value("error", std::string("update failed")));
        result = *r;
        updated = *service.updated_model(id);
    } else {
        throw UsageError("--oracle must be simulated or http, got '" + c.active.oracle + "'");
    }

    updated.save(dir / "model.bal");
    const std::vector<CellResult> cells{result};
    write_text(dir / "results.tsv", results_table(cells));
    const auto j = cell_json(result);
    write_text(dir / "result.json", j.dump(2) + "\n");
    log("accuracy " + std::to_string(result.pre.accuracy) + " -> " + std::to_string(result.post.accuracy) + " with " +
        std::to_string(result.acquired) + " labels");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_sweep(RunConfig& c) {
    const auto store = load_store(c);
    const auto dir = out_dir(c);
    write_config(c, dir);
    std::map<std::string, ModelBundle> models;
    if (!c.paths.models.empty()) {
        if (!fs::is_directory(c.paths.models))
            throw DataError(DataErrorCode::io, "models directory '" + c.paths.models + "' does not exist");
        for (const auto& user : store.user_ids()) {
            const fs::path p = fs::path(c.paths.models) / (user + ".bal");
            if (!fs::exists(p)) continue;
            auto m = ModelBundle::load(p);
            check_model(m, store, p.string());
            models.emplace(user, std::move(m));
        }
        log("loaded " + std::to_string(models.size()) + " baseline models");
    }
    const auto cells = sweep(
        store, c.plan,
        [&](const std::string& user) -> const ModelBundle* {
            const auto it = models.find(user);
            return it == models.end() ? nullptr : &it->second;
        },
        log);
    const auto table = results_table(cells);
    write_text(dir / "results.tsv", table);
    write_text(dir / "summary.json", sweep_summary(cells).dump(2) + "\n");
    std::size_t failed = 0;
    for (const auto& cell : cells) failed += !cell.error.empty();
    if (failed) log(std::to_string(failed) + " of " + std::to_string(cells.size()) + " cells failed");
    std::cout << table;
    return 0;
}

int cmd_bench(RunConfig& c) {
    const auto store = load_store(c);
    const auto model = load_model(c.paths.model, store);
    const std::string user = c.bench.user.empty() ? store.user_ids().front() : c.bench.user;
    const auto& w = user_windows(store, user);
    const auto dir = out_dir(c);
    write_config(c, dir);
    log("timing on " + std::to_string(w.size()) + " windows of " + user);
    const auto report = bench_timing(model, w, display_rate(store, w), c.plan, c.bench.repeats);
    json j = to_json(report);
    j["user"] = user;
    write_text(dir / "bench.json", j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_serve(RunConfig& c) {
    const auto store = load_store(c);
    const auto model = load_model(c.paths.model, store);
    const auto dir = out_dir(c);
    write_config(c, dir);
    const std::uint64_t seed = c.plan.seeds.front();

    // Signals are taken by sigwait on this thread; block them before any
    // worker thread starts so the workers inherit the mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    OracleService service(store, model, c.plan, seed);
    service.on_complete([&](const std::string& id, const CellResult& r, const ModelBundle& m) {
        const fs::path sdir = dir / "sessions" / id;
        m.save(sdir / "model.bal");
        write_text(sdir / "result.json", cell_json(r).dump(2) + "\n");
        log("session " + id + ": accuracy " + std::to_string(r.pre.accuracy) + " -> " +
            std::to_string(r.post.accuracy));
    });
    OracleServer server(service);
    const int port = server.start(c.http.host, c.http.port);
    log("serving on http://" + c.http.host + ":" + std::to_string(port));
    std::cout << json{{"host", c.http.host}, {"port", port}}.dump() << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    log("stopping");
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian active learning for activity recognition"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", "bal 1.0");

    RunConfig flags;
    std::string config_path, plan_path;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "JSON run configuration (flags override it)");
    auto* seed_opt = app.add_option("--seed", seed, "Global seed");
    app.add_flag("-q,--quiet", quiet, "No progress output");

    auto* prep = app.add_subcommand("prep", "Ingest a dataset and write a window store");
    auto* manifest_opt = prep->add_option("--manifest", flags.paths.manifest, "Dataset manifest (JSON)");
    auto* prep_out = prep->add_option("--out", flags.paths.out, "Store directory");

    std::map<std::string, CLI::Option*> opts;
    auto store_opt = [&](CLI::App* sub) {
        opts[sub->get_name() + ".store"] = sub->add_option("--store", flags.paths.store, "Window store directory");
        opts[sub->get_name() + ".out"] = sub->add_option("--out", flags.paths.out, "Output directory");
        opts[sub->get_name() + ".plan"] = sub->add_option("--plan", plan_path, "Experiment plan (JSON)");
    };
    auto model_opt = [&](CLI::App* sub) {
        opts[sub->get_name() + ".model"] = sub->add_option("--model", flags.paths.model, "Model bundle");
    };
    auto http_opt = [&](CLI::App* sub) {
        opts[sub->get_name() + ".host"] = sub->add_option("--host", flags.http.host, "Listen address");
        opts[sub->get_name() + ".port"] = sub->add_option("--port", flags.http.port, "Listen port (0: any)");
    };

    auto* baseline = app.add_subcommand("baseline", "Leave-one-user-out baseline models and metrics");
    store_opt(baseline);

    auto* active = app.add_subcommand("active", "One incremental-learning run for a user");
    store_opt(active);
    model_opt(active);
    http_opt(active);
    opts["active.user"] = active->add_option("--user", flags.active.user, "Held-out user");
    opts["active.eta"] = active->add_option("--eta", flags.active.eta, "Fraction of the pool to label");
    opts["active.fn"] = active->add_option("--fn", flags.active.function, "Acquisition function")
                            ->check(CLI::IsMember({"maxentropy", "bald", "varratio", "random"}));
    opts["active.oracle"] = active->add_option("--oracle", flags.active.oracle, "Label source")
                                ->check(CLI::IsMember({"simulated", "http"}));

    auto* sweep_cmd = app.add_subcommand("sweep", "Grid of users x seeds x functions x eta");
    store_opt(sweep_cmd);
    opts["sweep.models"] =
        sweep_cmd->add_option("--models", flags.paths.models, "Directory of <user>.bal baselines");

    auto* bench = app.add_subcommand("bench", "Per-stage timing report");
    store_opt(bench);
    model_opt(bench);
    opts["bench.user"] = bench->add_option("--user", flags.bench.user, "User whose windows are timed");
    opts["bench.repeats"] = bench->add_option("--repeats", flags.bench.repeats, "Repetitions per measurement");

    auto* serve = app.add_subcommand("serve", "Labeling service");
    store_opt(serve);
    model_opt(serve);
    http_opt(serve);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        RunConfig c;
        if (!config_path.empty()) c = read_json(config_path, "config").get<RunConfig>();
        const std::string command = app.get_subcommands().front()->get_name();
        c.command = command;
        if (!plan_path.empty()) c.plan = read_json(plan_path, "plan").get<ExperimentPlan>();
        if (*seed_opt) c.seed = seed;
        if (*manifest_opt) c.paths.manifest = flags.paths.manifest;
        if (*prep_out) c.paths.out = flags.paths.out;
        auto given = [&](const std::string& key) {
            const auto it = opts.find(command + "." + key);
            return it != opts.end() && it->second->count() > 0;
        };
        if (given("store")) c.paths.store = flags.paths.store;
        if (given("out")) c.paths.out = flags.paths.out;
        if (given("model")) c.paths.model = flags.paths.model;
        if (given("models")) c.paths.models = flags.paths.models;
        if (given("host")) c.http.host = flags.http.host;
        if (given("port")) c.http.port = flags.http.port;
        if (given("user")) (command == "bench" ? c.bench.user : c.active.user) =
                               command == "bench" ? flags.bench.user : flags.active.user;
        if (given("eta")) c.active.eta = flags.active.eta;
        if (given("fn")) c.active.function = flags.active.function;
        if (given("oracle")) c.active.oracle = flags.active.oracle;
        if (given("repeats")) c.bench.repeats = flags.bench.repeats;
        c.apply_seed();
        c.plan.validate();

        if (command == "prep") return cmd_prep(c);
        if (command == "baseline") return cmd_baseline(c);
        if (command == "active") return cmd_active(c);
        if (command == "sweep") return cmd_sweep(c);
        if (command == "bench") return cmd_bench(c);
        if (command == "serve") return cmd_serve(c);
        throw UsageError("unknown command " + command);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: invalid configuration: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
