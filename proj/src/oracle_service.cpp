#include "bal/oracle_service.hpp"

#include <cstdio>
#include <stdexcept>

#include "httplib.h"

namespace bal {

using json = nlohmann::json;

std::string to_string(TaskState s) {
    switch (s) {
        case TaskState::pending: return "pending";
        case TaskState::labeled: return "labeled";
        case TaskState::skipped: return "skipped";
    }
    return "?";
}

struct OracleService::Session {
    std::string id;
    std::string user;
    double eta = 0.0;
    Acquisition function = Acquisition::variation_ratio;
    std::uint64_t seed = 0;
    std::unique_ptr<CellContext> context;
    AcquisitionBatch batch;
    std::vector<LabelTask> tasks;
    std::size_t pending = 0;
    std::size_t labeled = 0;
    std::size_t skipped = 0;
    std::size_t model_version = 0;
    // waiting -> running -> done | failed
    std::string update = "waiting";
    std::string error;
    std::optional<CellResult> result;
    std::optional<ModelBundle> model;
    std::mutex mutex;
    std::condition_variable finished;
    std::thread worker;
};

namespace {

ApiReply error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

std::string hex_id(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::optional<std::size_t> index_field(const json& body, const char* key) {
    if (!body.is_object() || !body.contains(key)) return std::nullopt;
    const auto& v = body[key];
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::size_t>(v.get<std::int64_t>());
    return std::nullopt;
}

}  // namespace

OracleService::OracleService(const WindowStore& store, ModelBundle baseline, ExperimentPlan plan, std::uint64_t seed)
    : store_(&store), baseline_(std::move(baseline)), plan_(std::move(plan)), seed_(seed) {
    plan_.validate();
}

OracleService::~OracleService() {
    std::vector<std::shared_ptr<Session>> all;
    {
        std::lock_guard lock(mutex_);
        for (auto& [id, s] : sessions_) all.push_back(s);
    }
    for (auto& s : all)
        if (s->worker.joinable()) s->worker.join();
}

void OracleService::on_complete(CompletionHook hook) { hook_ = std::move(hook); }

std::shared_ptr<OracleService::Session> OracleService::find(const std::string& id) {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

ApiReply OracleService::create_session(const json& body) {
    if (!body.is_object()) return error(400, "body must be a JSON object");
    if (!body.contains("eta") || !body["eta"].is_number()) return error(400, "eta must be a number");
    const double eta = body["eta"].get<double>();
    if (!(eta >= 0.0 && eta <= 1.0)) return error(400, "eta must lie in [0, 1]");
    if (!body.contains("function") || !body["function"].is_string()) return error(400, "function must be a string");
    if (!body.contains("user") || !body["user"].is_string()) return error(400, "user must be a string");

    auto s = std::make_shared<Session>();
    s->eta = eta;
    s->user = body["user"].get<std::string>();
    s->seed = seed_;
    if (body.contains("seed")) {
        const auto seed = index_field(body, "seed");
        if (!seed) return error(400, "seed must be a non-negative integer");
        s->seed = *seed;
    }
    try {
        s->function = parse_acquisition(body["function"].get<std::string>());
    } catch (const std::invalid_argument& e) {
        return error(400, e.what());
    }
    if (!store_->users.count(s->user)) return error(404, "unknown user '" + s->user + "'");

    try {
        s->context = std::make_unique<CellContext>(*store_, s->user, baseline_, plan_, s->seed);
        s->batch = s->context->select(eta, s->function);
        s->context->pre();
    } catch (const std::exception& e) {
        return error(400, e.what());
    }
    for (std::size_t i = 0; i < s->batch.selected.size(); ++i) {
        const std::size_t idx = s->batch.selected[i];
        s->tasks.push_back({i + 1, idx, i, s->batch.scores[idx], TaskState::pending, std::nullopt});
    }
    s->pending = s->tasks.size();
    {
        std::lock_guard lock(mutex_);
        s->id = "s" + std::to_string(next_session_++);
        sessions_.emplace(s->id, s);
    }
    json reply{{"session_id", s->id},
               {"k", s->tasks.size()},
               {"user", s->user},
               {"eta", eta},
               {"function", to_string(s->function)},
               {"seed", s->seed},
               {"pool_size", s->context->pool().size()},
               {"test_size", s->context->test().size()}};
    if (s->tasks.empty()) {
        std::lock_guard lock(s->mutex);
        start_update(s);
    }
    return {201, reply};
}

json OracleService::task_json(const Session& s, const LabelTask& t) const {
    const auto& w = store_->users.at(s.user);
    const std::size_t row = s.context->pool_rows()[t.pool_index];
    const std::size_t L = w.display.dim(2);
    const double seconds = store_->provenance.at("preprocessing").at("window_seconds").get<double>();
    json display{{"rate_hz", static_cast<double>(L) / seconds}};
    const char* axes[] = {"x", "y", "z"};
    for (std::size_t a = 0; a < 3; ++a) {
        const double* p = &w.display[(row * 3 + a) * L];
        display[axes[a]] = std::vector<double>(p, p + L);
    }
    return json{{"session_id", s.id},
                {"task_id", t.task_id},
                {"window_id", hex_id(w.window_ids[row])},
                {"user", s.user},
                {"device", w.devices[row]},
                {"rank", t.rank},
                {"score", t.score},
                {"function", to_string(s.function)},
                {"state", to_string(t.state)},
                {"classes", store_->classes},
                {"display", display}};
}

ApiReply OracleService::next(const std::string& session_id) {
    const auto s = find(session_id);
    if (!s) return error(404, "unknown session '" + session_id + "'");
    std::lock_guard lock(s->mutex);
    for (const auto& t : s->tasks)
        if (t.state == TaskState::pending) return {200, task_json(*s, t)};
    return {204, json()};
}

ApiReply OracleService::label(const std::string& session_id, const json& body) {
    return resolve(session_id, body, false);
}

ApiReply OracleService::skip(const std::string& session_id, const json& body) {
    return resolve(session_id, body, true);
}

ApiReply OracleService::resolve(const std::string& session_id, const json& body, bool skip) {
    const auto s = find(session_id);
    if (!s) return error(404, "unknown session '" + session_id + "'");
    const auto task_id = index_field(body, "task_id");
    if (!task_id) return error(400, "task_id must be a non-negative integer");
    std::optional<std::size_t> cls;
    if (!skip) {
        if (!body.contains("class_index") || !body["class_index"].is_number_integer())
            return error(400, "class_index must be an integer");
        const auto v = body["class_index"].get<std::int64_t>();
        if (v < 0 || static_cast<std::size_t>(v) >= store_->classes.size())
            return error(400, "class_index " + std::to_string(v) + " is outside [0, " +
                                  std::to_string(store_->classes.size()) + ")");
        cls = static_cast<std::size_t>(v);
    }

    std::lock_guard lock(s->mutex);
    if (*task_id == 0 || *task_id > s->tasks.size())
        return error(404, "unknown task " + std::to_string(*task_id));
    auto& t = s->tasks[*task_id - 1];
    if (t.state != TaskState::pending)
        return {409, json{{"error", "task " + std::to_string(t.task_id) + " is already " + to_string(t.state)},
                          {"state", to_string(t.state)}}};
    if (skip) {
        t.state = TaskState::skipped;
        ++s->skipped;
    } else {
        t.state = TaskState::labeled;
        t.label = cls;
        ++s->labeled;
    }
    --s->pending;
    if (s->pending == 0) start_update(s);
    return {200, json{{"accepted", true},
                      {"task_id", t.task_id},
                      {"state", to_string(t.state)},
                      {"remaining", s->pending},
                      {"update", s->update}}};
}

// Caller holds s->mutex.
void OracleService::start_update(const std::shared_ptr<Session>& s) {
    s->update = "running";
    std::vector<std::pair<std::size_t, std::size_t>> labels;
    std::size_t skipped = 0;
    for (const auto& t : s->tasks) {
        if (t.state == TaskState::labeled) labels.emplace_back(t.pool_index, *t.label);
        else ++skipped;
    }
    s->worker = std::thread([this, s, labels = std::move(labels), skipped] {
        try {
            ModelBundle updated;
            CellResult r = s->context->finish(s->eta, s->function, s->batch, labels, skipped, &updated);
            if (hook_) hook_(s->id, r, updated);
            std::lock_guard lock(s->mutex);
            if (r.acquired > 0) ++s->model_version;
            s->result = std::move(r);
            s->model = std::move(updated);
            s->update = "done";
        } catch (const std::exception& e) {
            std::lock_guard lock(s->mutex);
            s->update = "failed";
            s->error = e.what();
        }
        s->finished.notify_all();
    });
}

ApiReply OracleService::status(const std::string& session_id) {
    const auto s = find(session_id);
    if (!s) return error(404, "unknown session '" + session_id + "'");
    std::lock_guard lock(s->mutex);
    json j{{"session_id", s->id},
           {"user", s->user},
           {"eta", s->eta},
           {"function", to_string(s->function)},
           {"seed", s->seed},
           {"k", s->tasks.size()},
           {"pending", s->pending},
           {"labeled", s->labeled},
           {"skipped", s->skipped},
           {"model_version", s->model_version},
           {"update", s->update},
           {"classes", store_->classes},
           {"pre", s->context->pre()},
           {"post", nullptr}};
    if (s->result) j["post"] = s->result->post;
    if (!s->error.empty()) j["error"] = s->error;
    return {200, j};
}

ApiReply OracleService::classes() const { return {200, json{{"classes", store_->classes}}}; }

bool OracleService::wait(const std::string& session_id, std::chrono::milliseconds timeout) {
    const auto s = find(session_id);
    if (!s) return false;
    std::unique_lock lock(s->mutex);
    return s->finished.wait_for(lock, timeout, [&] { return s->update == "done" || s->update == "failed"; });
}

std::optional<CellResult> OracleService::result(const std::string& session_id) {
    const auto s = find(session_id);
    if (!s) return std::nullopt;
    std::lock_guard lock(s->mutex);
    return s->result;
}

std::optional<ModelBundle> OracleService::updated_model(const std::string& session_id) {
    const auto s = find(session_id);
    if (!s) return std::nullopt;
    std::lock_guard lock(s->mutex);
    return s->model;
}

void OracleService::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const ApiReply& r) {
        res.status = r.status;
        if (r.status != 204) res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req) { return json::parse(req.body, nullptr, false); };

    server.Get("/health", [send](const httplib::Request&, httplib::Response& res) {
        send(res, {200, json{{"status", "ok"}}});
    });
    server.Get("/classes", [this, send](const httplib::Request&, httplib::Response& res) { send(res, classes()); });
    server.Post("/session", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
        const json body = parse(req);
        send(res, body.is_discarded() ? error(400, "malformed JSON") : create_session(body));
    });
    server.Get(R"(/session/([^/]+)/next)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, next(req.matches[1]));
    });
    server.Get(R"(/session/([^/]+)/status)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, status(req.matches[1]));
    });
    server.Post(R"(/session/([^/]+)/label)",
                [this, send, parse](const httplib::Request& req, httplib::Response& res) {
                    const json body = parse(req);
                    send(res, body.is_discarded() ? error(400, "malformed JSON") : label(req.matches[1], body));
                });
    server.Post(R"(/session/([^/]+)/skip)",
                [this, send, parse](const httplib::Request& req, httplib::Response& res) {
                    const json body = parse(req);
                    send(res, body.is_discarded() ? error(400, "malformed JSON") : skip(req.matches[1], body));
                });
}

OracleServer::OracleServer(OracleService& service) : server_(std::make_unique<httplib::Server>()) {
    service.mount(*server_);
}

OracleServer::~OracleServer() { stop(); }

int OracleServer::start(const std::string& host, int port) {
    if (port == 0) {
        port = server_->bind_to_any_port(host);
        if (port < 0) throw std::runtime_error("cannot bind to " + host);
    } else if (!server_->bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind to " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    return port;
}

void OracleServer::stop() {
    server_->stop();
    join();
}

void OracleServer::join() {
    if (thread_.joinable()) thread_.join();
}

}  // namespace bal
