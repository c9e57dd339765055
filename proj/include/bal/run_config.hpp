#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"

#include "bal/active.hpp"

namespace bal {

/// Complete configuration of one CLI run. Key tree:
///
///   command   prep | baseline | active | sweep | bench | serve
///   seed      global seed or null
///   paths     {manifest, store, model, models, out}
///   plan      ExperimentPlan (model holds the HarnetConfig overrides)
///   active    {user, eta, function, oracle}
///   http      {host, port}
///   bench     {user, repeats}
///
/// Missing keys take their defaults, so a partial file is a valid config.
struct RunConfig {
    std::string command;
    std::optional<std::uint64_t> seed;

    struct Paths {
        std::string manifest;
        std::string store;
        std::string model;
        /// Directory of per-user baseline bundles (<user>.bal) for sweeps.
        std::string models;
        std::string out;
        friend bool operator==(const Paths&, const Paths&) = default;
    } paths;

    ExperimentPlan plan;

    struct Active {
        std::string user;
        double eta = 0.5;
        std::string function = "varratio";
        /// simulated | http
        std::string oracle = "simulated";
        friend bool operator==(const Active&, const Active&) = default;
    } active;

    struct Http {
        std::string host = "127.0.0.1";
        int port = 8080;
        friend bool operator==(const Http&, const Http&) = default;
    } http;

    struct Bench {
        /// Empty: the first user of the store.
        std::string user;
        std::size_t repeats = 5;
        friend bool operator==(const Bench&, const Bench&) = default;
    } bench;

    /// Applies the global seed: baseline seed and cell seeds of the plan.
    /// The synthetic corpus seed is applied by `prep`.
    void apply_seed();
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

}  // namespace bal
