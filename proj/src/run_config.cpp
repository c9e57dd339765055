#include "bal/run_config.hpp"

namespace bal {

using json = nlohmann::json;

void RunConfig::apply_seed() {
    if (!seed) return;
    plan.baseline_seed = *seed;
    plan.seeds = {*seed};
}

void to_json(json& j, const RunConfig& c) {
    j = json{{"command", c.command},
             {"seed", c.seed ? json(*c.seed) : json(nullptr)},
             {"paths",
              {{"manifest", c.paths.manifest},
               {"store", c.paths.store},
               {"model", c.paths.model},
               {"models", c.paths.models},
               {"out", c.paths.out}}},
             {"plan", c.plan},
             {"active",
              {{"user", c.active.user},
               {"eta", c.active.eta},
               {"function", c.active.function},
               {"oracle", c.active.oracle}}},
             {"http", {{"host", c.http.host}, {"port", c.http.port}}},
             {"bench", {{"user", c.bench.user}, {"repeats", c.bench.repeats}}}};
}

void from_json(const json& j, RunConfig& c) {
    RunConfig d;
    auto get = [](const json& obj, const char* key, auto& field) {
        if (obj.contains(key) && !obj.at(key).is_null()) obj.at(key).get_to(field);
    };
    get(j, "command", d.command);
    if (j.contains("seed") && !j.at("seed").is_null()) d.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        get(p, "manifest", d.paths.manifest);
        get(p, "store", d.paths.store);
        get(p, "model", d.paths.model);
        get(p, "models", d.paths.models);
        get(p, "out", d.paths.out);
    }
    get(j, "plan", d.plan);
    if (j.contains("active")) {
        const auto& a = j.at("active");
        get(a, "user", d.active.user);
        get(a, "eta", d.active.eta);
        get(a, "function", d.active.function);
        get(a, "oracle", d.active.oracle);
    }
    if (j.contains("http")) {
        get(j.at("http"), "host", d.http.host);
        get(j.at("http"), "port", d.http.port);
    }
    if (j.contains("bench")) {
        get(j.at("bench"), "user", d.bench.user);
        get(j.at("bench"), "repeats", d.bench.repeats);
    }
    c = d;
}

}  // namespace bal
