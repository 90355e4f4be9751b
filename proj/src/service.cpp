#include "alod/service.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "httplib.h"

#include "alod/errors.hpp"

namespace alod {

using nlohmann::json;

ServiceResponse service_error(int status, const std::string& code, const std::string& message, json details) {
    json body{{"code", code}, {"message", message}};
    if (!details.is_null()) body["details"] = std::move(details);
    return {status, std::move(body)};
}

namespace {

const char* status_name(SessionStatus s) {
    switch (s) {
        case SessionStatus::awaiting_labels: return "awaiting_labels";
        case SessionStatus::updating: return "updating";
        case SessionStatus::exhausted: return "exhausted";
    }
    return "unknown";
}

json suggestion_json(const Detection& det, const std::vector<std::string>& classes, const ImageAnnotation* truth) {
    json j = detection_to_json(det);
    auto [first, second] = det.dist.top_two();
    j["top2"] = json::array({{{"class", classes[static_cast<std::size_t>(first)]}, {"score", det.dist[first]}},
                             {{"class", classes[static_cast<std::size_t>(second)]}, {"score", det.dist[second]}}});
    j["margin"] = margin_1vs2(det.dist);
    if (truth && truth->width > 0 && truth->height > 0) {
        auto r = to_rect(det.box);
        j["pixel_box"] = {static_cast<int>(std::lround(r.x0 * truth->width)) + 1,
                          static_cast<int>(std::lround(r.y0 * truth->height)) + 1,
                          static_cast<int>(std::lround(r.x1 * truth->width)),
                          static_cast<int>(std::lround(r.y1 * truth->height))};
    }
    return j;
}

json curve_json(const LearningCurve& curve) {
    json out = json::array();
    std::vector<double> area = curve.checkpoints.size() >= 2 ? aulc(curve) : std::vector<double>(curve.checkpoints.size(), 0.0);
    for (std::size_t i = 0; i < curve.checkpoints.size(); ++i) {
        const auto& cp = curve.checkpoints[i];
        json ap = json::object();
        for (const auto& [c, v] : cp.per_class_ap) ap[c] = v ? json(*v) : json(nullptr);
        out.push_back({{"samples", cp.samples_labeled}, {"ap", ap}, {"map", cp.map}, {"aulc", area[i]}});
    }
    return out;
}

}  // namespace

CurationService::CurationService(std::optional<std::filesystem::path> image_dir) : image_dir_(std::move(image_dir)) {}

std::shared_ptr<Session> CurationService::find(const std::string& id) const {
    std::lock_guard guard(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

void CurationService::propose(Session& session) {
    auto options = session.config.exploration_options();
    if (exploration_finished(session.progress.state, options)) {
        session.pending.reset();
        session.status = SessionStatus::exhausted;
        return;
    }
    session.pending = propose_selection(session.progress.state, *session.detector, session.method, options.scoring);
    session.status = SessionStatus::awaiting_labels;
}

ServiceResponse CurationService::create_session(const json& body) {
    auto session = std::make_shared<Session>();
    try {
        session->config = config_from_json(body);
        session->config.validate();
        session->method = session->config.methods.front();
        session->seed = session->config.seeds.front();
        if (body.contains("method") && body["method"].is_string())
            session->method = SelectionMethod::parse(body["method"].get<std::string>());
        if (body.contains("seed")) session->seed = body["seed"].get<std::uint64_t>();
        auto data = std::make_shared<ExperimentData>(ExperimentData::load(session->config));
        session->detector = data->make_detector(session->config, session->seed);
        session->progress.state = data->initial_state(session->config, session->seed);
        session->progress.curve.append(
            make_checkpoint(session->progress.state, *session->detector, data->evaluator(session->config)));
        session->data = std::move(data);
        propose(*session);
    } catch (const ConfigError& e) {
        return service_error(400, "config_error", e.what());
    } catch (const json::exception& e) {
        return service_error(400, "config_error", e.what());
    } catch (const Error& e) {
        return service_error(422, "data_error", e.what());
    }

    std::lock_guard guard(sessions_mutex_);
    session->id = "s" + std::to_string(next_id_++);
    sessions_[session->id] = session;
    return {201, {{"session_id", session->id}, {"status", status_name(session->status)}}};
}

json CurationService::batch_body(const Session& session) const {
    const auto& pending = *session.pending;
    const auto& classes = session.detector->class_list();
    json images = json::array();
    for (const auto& id : session.progress.state.find_batch(pending.batch_id)->image_ids) {
        const ImageAnnotation* truth = nullptr;
        if (auto it = session.data->train.images.find(id); it != session.data->train.images.end()) truth = &it->second;
        json suggestions = json::array();
        for (const auto& det : session.detector->detect(id)) suggestions.push_back(suggestion_json(det, classes, truth));
        json image{{"image_id", id}, {"suggestions", suggestions}};
        if (truth) {
            image["width"] = truth->width;
            image["height"] = truth->height;
        }
        if (auto s = pending.per_image_scores.find(id); s != pending.per_image_scores.end()) image["score"] = s->second;
        images.push_back(std::move(image));
    }
    return {{"session_id", session.id},
            {"status", status_name(session.status)},
            {"step", session.progress.state.step},
            {"method", session.method.name()},
            {"batch_id", pending.batch_id},
            {"batch_value", pending.batch_value},
            {"images", images}};
}

ServiceResponse CurationService::get_batch(const std::string& session_id) const {
    auto session = find(session_id);
    if (!session) return service_error(404, "unknown_session", "no session '" + session_id + "'");
    std::shared_lock guard(session->lock);
    if (!session->pending) return service_error(409, "exhausted", "no unlabeled batches remain");
    return {200, batch_body(*session)};
}

ServiceResponse CurationService::submit_labels(const std::string& session_id, const json& body) {
    auto session = find(session_id);
    if (!session) return service_error(404, "unknown_session", "no session '" + session_id + "'");
    std::unique_lock guard(session->lock);
    if (!session->pending) return service_error(409, "exhausted", "no unlabeled batches remain");

    const json& list = body.is_object() && body.contains("labels") ? body["labels"] : body;
    if (!list.is_array()) return service_error(400, "malformed", "expected a list of label submissions");

    const auto& batch_ids = session->progress.state.find_batch(session->pending->batch_id)->image_ids;
    std::set<std::string> expected(batch_ids.begin(), batch_ids.end());
    std::map<std::string, ImageAnnotation> labels;
    std::vector<std::string> foreign;
    try {
        for (const auto& item : list) {
            std::string id = item.at("image_id").get<std::string>();
            if (!expected.count(id)) {
                foreign.push_back(id);
                continue;
            }
            if (labels.count(id)) return service_error(422, "duplicate_image", "image '" + id + "' submitted twice");
            ImageAnnotation a;
            a.image_id = id;
            if (auto it = session->data->train.images.find(id); it != session->data->train.images.end()) {
                a.width = it->second.width;
                a.height = it->second.height;
            }
            for (const auto& b : item.value("boxes", json::array())) {
                GroundTruthBox box;
                box.class_name = b.at("class").get<std::string>();
                auto c = b.at("box").get<std::vector<int>>();
                if (c.size() != 4) return service_error(422, "invalid_box", "box must be [xmin, ymin, xmax, ymax]");
                box.xmin = c[0];
                box.ymin = c[1];
                box.xmax = c[2];
                box.ymax = c[3];
                box.difficult = b.value("difficult", false);
                try {
                    validate_box(box, a.width, a.height);
                } catch (const InvariantError& e) {
                    return service_error(422, "invalid_box", "image '" + id + "': " + e.what());
                }
                a.boxes.push_back(std::move(box));
            }
            labels.emplace(id, std::move(a));
        }
    } catch (const json::exception& e) {
        return service_error(400, "malformed", e.what());
    }
    if (!foreign.empty())
        return service_error(422, "not_pending", "labels for images outside the pending batch", foreign);
    std::vector<std::string> missing;
    for (const auto& id : batch_ids)
        if (!labels.count(id)) missing.push_back(id);
    if (!missing.empty()) return service_error(422, "incomplete", "labels missing for some images", missing);

    std::vector<ImageAnnotation> ordered;
    for (auto& [_, a] : labels) ordered.push_back(std::move(a));
    session->status = SessionStatus::updating;
    auto record = *session->pending;
    ExperimentState next;
    try {
        next = commit_batch(session->progress.state, *session->detector, record.batch_id, std::move(ordered));
    } catch (const Error& e) {
        session->status = SessionStatus::awaiting_labels;
        return service_error(500, "update_failed", e.what());
    }

    auto options = session->config.exploration_options();
    session->progress.state = std::move(next);
    session->progress.records.push_back(std::move(record));
    const auto& state = session->progress.state;
    if (state.step % options.eval_every == 0 || exploration_finished(state, options))
        session->progress.curve.append(
            make_checkpoint(state, *session->detector, session->data->evaluator(session->config)));
    propose(*session);

    json ack{{"accepted", true}, {"step", state.step}, {"status", status_name(session->status)}};
    if (session->pending) ack["next_batch"] = batch_body(*session);
    return {200, ack};
}

ServiceResponse CurationService::get_progress(const std::string& session_id) const {
    auto session = find(session_id);
    if (!session) return service_error(404, "unknown_session", "no session '" + session_id + "'");
    std::shared_lock guard(session->lock);
    const auto& classes = session->detector->class_list();
    auto counts = session->progress.state.counts.restricted_to(classes);
    json weights = json::object();
    for (const auto& c : classes) weights[c] = class_weight(counts, c);
    return {200,
            {{"session_id", session->id},
             {"status", status_name(session->status)},
             {"step", session->progress.state.step},
             {"samples_labeled", session->progress.state.samples_labeled},
             {"curve", curve_json(session->progress.curve)},
             {"counts", counts.per_class},
             {"total", counts.total},
             {"weights", weights}}};
}

std::vector<SelectionRecord> CurationService::records(const std::string& session_id) const {
    auto session = find(session_id);
    if (!session) return {};
    std::shared_lock guard(session->lock);
    return session->progress.records;
}

std::optional<CurationService::ImageFile> CurationService::image(const std::string& image_id) const {
    if (!image_dir_ || image_id.empty() || image_id.find('/') != std::string::npos ||
        image_id.find('\\') != std::string::npos || image_id.find("..") != std::string::npos)
        return std::nullopt;
    static const std::pair<const char*, const char*> kinds[] = {
        {".jpg", "image/jpeg"}, {".jpeg", "image/jpeg"}, {".png", "image/png"}};
    for (const auto& [ext, type] : kinds) {
        auto path = *image_dir_ / (image_id + ext);
        std::ifstream in(path, std::ios::binary);
        if (!in) continue;
        std::ostringstream bytes;
        bytes << in.rdbuf();
        return ImageFile{bytes.str(), type};
    }
    return std::nullopt;
}

void CurationService::mount(httplib::Server& server) {
    auto reply = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto parse = [](const httplib::Request& req) -> std::optional<json> {
        try {
            return json::parse(req.body);
        } catch (const json::parse_error&) {
            return std::nullopt;
        }
    };

    server.Post("/api/sessions", [=, this](const httplib::Request& req, httplib::Response& res) {
        auto body = parse(req);
        if (!body) return reply(res, service_error(400, "malformed", "body is not JSON"));
        reply(res, create_session(*body));
    });
    server.Get(R"(/api/sessions/([^/]+)/batch)", [=, this](const httplib::Request& req, httplib::Response& res) {
        reply(res, get_batch(req.matches[1]));
    });
    server.Post(R"(/api/sessions/([^/]+)/labels)", [=, this](const httplib::Request& req, httplib::Response& res) {
        auto body = parse(req);
        if (!body) return reply(res, service_error(400, "malformed", "body is not JSON"));
        reply(res, submit_labels(req.matches[1], *body));
    });
    server.Get(R"(/api/sessions/([^/]+)/progress)", [=, this](const httplib::Request& req, httplib::Response& res) {
        reply(res, get_progress(req.matches[1]));
    });
    server.Get(R"(/api/images/([^/]+))", [=, this](const httplib::Request& req, httplib::Response& res) {
        auto file = image(req.matches[1]);
        if (!file) return reply(res, service_error(404, "unknown_image", "no image '" + std::string(req.matches[1]) + "'"));
        res.set_content(file->bytes, file->content_type.c_str());
    });
}

}  // namespace alod
