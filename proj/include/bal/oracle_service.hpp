#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "bal/active.hpp"

namespace httplib {
class Server;
}

namespace bal {

/// Reply of an API call: HTTP status and JSON body.
struct ApiReply {
    int status = 200;
    nlohmann::json body;
};

enum class TaskState { pending, labeled, skipped };

std::string to_string(TaskState s);

struct LabelTask {
    std::size_t task_id = 0;
    std::size_t pool_index = 0;
    std::size_t rank = 0;
    double score = 0.0;
    TaskState state = TaskState::pending;
    std::optional<std::size_t> label;
};

/// Labeling sessions over one store and one baseline model. Each session is
/// a single-shot cell (see CellContext) whose labels come from API calls;
/// the fine-tune and evaluation run once, on a background thread, after the
/// last task is labeled or skipped.
///
/// Endpoints (mounted by OracleServer):
///   POST /session              {eta, function, user[, seed]}
///   GET  /session/{id}/next
///   POST /session/{id}/label   {task_id, class_index}
///   POST /session/{id}/skip    {task_id}
///   GET  /session/{id}/status
///   GET  /classes, GET /health
class OracleService {
public:
    /// Called on the worker thread when a session's update has finished.
    using CompletionHook = std::function<void(const std::string& session_id, const CellResult&, const ModelBundle&)>;

    OracleService(const WindowStore& store, ModelBundle baseline, ExperimentPlan plan, std::uint64_t seed);
    ~OracleService();
    OracleService(const OracleService&) = delete;
    OracleService& operator=(const OracleService&) = delete;

    void on_complete(CompletionHook hook);

    ApiReply create_session(const nlohmann::json& body);
    ApiReply next(const std::string& session_id);
    ApiReply label(const std::string& session_id, const nlohmann::json& body);
    ApiReply skip(const std::string& session_id, const nlohmann::json& body);
    ApiReply status(const std::string& session_id);
    ApiReply classes() const;

    /// Blocks until the session's update finished (or failed). False on
    /// timeout or unknown session.
    bool wait(const std::string& session_id, std::chrono::milliseconds timeout);
    std::optional<CellResult> result(const std::string& session_id);
    std::optional<ModelBundle> updated_model(const std::string& session_id);

    /// Mounts the endpoints on an HTTP server.
    void mount(httplib::Server& server);

private:
    struct Session;
    std::shared_ptr<Session> find(const std::string& id);
    ApiReply resolve(const std::string& session_id, const nlohmann::json& body, bool skip);
    void start_update(const std::shared_ptr<Session>& s);
    nlohmann::json task_json(const Session& s, const LabelTask& t) const;

    const WindowStore* store_;
    ModelBundle baseline_;
    ExperimentPlan plan_;
    std::uint64_t seed_;
    CompletionHook hook_;
    std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::size_t next_session_ = 1;
};

/// OracleService behind an HTTP listener running on a background thread.
class OracleServer {
public:
    explicit OracleServer(OracleService& service);
    ~OracleServer();

    /// Binds (port 0 picks a free port) and starts serving. Returns the port.
    int start(const std::string& host, int port);
    void stop();
    /// Blocks until the listener exits.
    void join();

private:
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace bal
