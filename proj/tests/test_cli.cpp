#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path& workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("bal_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        std::ofstream(d / "m.json") << R"({"dataset_id": "cli", "synthetic": {"num_users": 3, "windows_per_class": 6, "rate_hz": 32}})";
        std::ofstream(d / "plan.json")
            << R"({"baseline_epochs": 2, "incremental_epochs": 1, "passes": 2, "eta_grid": [0, 0.5, 1], "functions": ["varratio", "random"], "seeds": [1, 2]})";
        return d;
    }();
    return dir;
}

struct Run {
    int code = -1;
    std::string out;
};

Run bal(const std::string& args) {
    const fs::path out = workdir() / "stdout.txt";
    const std::string cmd = "cd '" + workdir().string() + "' && '" BAL_CLI "' -q " + args + " > '" + out.string() +
                            "' 2> '" + (workdir() / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string read(const fs::path& p) {
    std::ifstream in(workdir() / p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string without_timing(const std::string& table) {
    // Drops the two trailing timing columns of every row.
    std::stringstream in(table), out;
    std::string line;
    while (std::getline(in, line)) {
        for (int k = 0; k < 2; ++k) line = line.substr(0, line.rfind('\t'));
        out << line << "\n";
    }
    return out.str();
}

}  // namespace

TEST_CASE("cli end to end") {
    REQUIRE(bal("prep --manifest m.json --out store").code == 0);
    CHECK(fs::exists(workdir() / "store" / "config.json"));
    REQUIRE(bal("baseline --store store --plan plan.json --out base").code == 0);
    CHECK(fs::exists(workdir() / "base" / "models" / "user1.bal"));

    SUBCASE("eta 0 keeps the baseline metrics") {
        const auto r = bal("active --store store --model base/models/user0.bal --plan plan.json --user user0 --eta 0 "
                           "--fn varratio --oracle simulated --out a0");
        REQUIRE(r.code == 0);
        const auto j = json::parse(r.out);
        CHECK(j["pre"] == j["post"]);
        CHECK(j["acquired"] == 0);
    }
    SUBCASE("sweep emits one row per cell and replays identically") {
        REQUIRE(bal("sweep --store store --plan plan.json --out sw").code == 0);
        const auto table = read("sw/results.tsv");
        CHECK(std::count(table.begin(), table.end(), '\n') == 1 + 3 * 2 * 2 * 3);
        REQUIRE(bal("--config sw/config.json sweep --out sw2").code == 0);
        CHECK(without_timing(read("sw2/results.tsv")) == without_timing(table));
    }
    SUBCASE("bench reports the timing fields") {
        const auto r = bal("bench --store store --model base/models/user0.bal --plan plan.json --out be");
        REQUIRE(r.code == 0);
        const auto j = json::parse(r.out);
        for (const auto* key : {"inference_per_window_seconds", "dwt_per_window_seconds",
                                "decimation_per_window_seconds", "incremental_epoch_seconds",
                                "stochastic_pass_seconds", "acquisition_total_seconds"})
            CHECK(j.at(key).get<double>() > 0.0);
    }
    SUBCASE("seed is honored and recorded") {
        REQUIRE(bal("active --store store --model base/models/user0.bal --plan plan.json --user user0 --eta 0.5 "
                    "--fn bald --seed 9 --out s9")
                    .code == 0);
        const auto cfg = json::parse(read("s9/config.json"));
        CHECK(cfg["seed"] == 9);
        CHECK(cfg["plan"]["seeds"] == json::array({9}));
        CHECK(json::parse(read("s9/result.json"))["seed"] == 9);
    }
    SUBCASE("errors map to exit codes") {
        CHECK(bal("sweep --no-such-flag").code == 1);
        CHECK(bal("active --store store --model base/models/user0.bal --user user0 --fn nope").code == 1);
        CHECK(bal("active --store store --model base/models/user0.bal --user nobody --out e").code == 1);
        CHECK(bal("active --store store --model missing.bal --user user0 --out e").code == 2);
        CHECK(bal("sweep --store missing --out e").code == 2);
        CHECK(bal("prep --manifest missing.json --out e").code == 2);
        std::ofstream(workdir() / "corrupt.bal") << "EBALNET1 not really";
        CHECK(bal("bench --store store --model corrupt.bal --out e").code == 2);
    }
}
