#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "json.hpp"

#include "alod/experiment.hpp"

namespace httplib {
class Server;
}

namespace alod {

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

/// Error body with a machine-readable code.
ServiceResponse service_error(int status, const std::string& code, const std::string& message,
                              nlohmann::json details = nullptr);

enum class SessionStatus { awaiting_labels, updating, exhausted };

/// One human-driven exploration run. Requests on a session serialize on its
/// lock; progress reads share it.
struct Session {
    std::string id;
    ExperimentConfig config;
    SelectionMethod method;
    std::uint64_t seed = 0;
    std::shared_ptr<const ExperimentData> data;
    std::unique_ptr<DetectorAdapter> detector;
    ExplorationResult progress;
    std::optional<SelectionRecord> pending;
    SessionStatus status = SessionStatus::awaiting_labels;
    mutable std::shared_mutex lock;
};

/// HTTP-independent core of the curation service; `mount` binds it to routes.
class CurationService {
public:
    explicit CurationService(std::optional<std::filesystem::path> image_dir = std::nullopt);

    /// Body: an experiment config; `seed` and `method` pick the run (defaults:
    /// first of `seeds` / `methods`).
    ServiceResponse create_session(const nlohmann::json& body);
    ServiceResponse get_batch(const std::string& session_id) const;
    ServiceResponse submit_labels(const std::string& session_id, const nlohmann::json& body);
    ServiceResponse get_progress(const std::string& session_id) const;

    struct ImageFile {
        std::string bytes;
        std::string content_type;
    };
    std::optional<ImageFile> image(const std::string& image_id) const;

    /// Selection log of a session (for parity checks against offline runs).
    std::vector<SelectionRecord> records(const std::string& session_id) const;

    void mount(httplib::Server& server);

private:
    std::shared_ptr<Session> find(const std::string& id) const;
    nlohmann::json batch_body(const Session& session) const;
    void propose(Session& session);

    std::optional<std::filesystem::path> image_dir_;
    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 1;
};

}  // namespace alod
