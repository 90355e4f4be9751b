#include "alod/dump.hpp"

#include <algorithm>

#include "alod/errors.hpp"

namespace alod {

using nlohmann::json;

nlohmann::json detection_to_json(const Detection& det) {
    std::vector<double> scores(det.dist.scores().data(), det.dist.scores().data() + det.dist.size());
    return json{{"box", {det.box.cx, det.box.cy, det.box.w, det.box.h}},
                {"conf", det.confidence},
                {"scores", scores},
                {"unknown", det.unknown}};
}

Detection detection_from_json(const nlohmann::json& j, std::size_t num_classes) {
    if (!j.is_object()) throw SchemaError("detection", "expected an object");
    auto field = [&](const char* name) -> const json& {
        auto it = j.find(name);
        if (it == j.end()) throw SchemaError(name);
        return *it;
    };
    const auto& box = field("box");
    if (!box.is_array() || box.size() != 4) throw SchemaError("box", "expected [cx, cy, w, h]");
    const auto& scores = field("scores");
    if (!scores.is_array()) throw SchemaError("scores", "expected an array");
    if (scores.size() != num_classes)
        throw SchemaError("scores", "expected " + std::to_string(num_classes) + " entries, got " +
                                        std::to_string(scores.size()));

    Detection det;
    try {
        det.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
        det.confidence = field("conf").get<double>();
        det.unknown = j.value("unknown", false);
        det.dist = Distribution::from(scores.get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw SchemaError("detection", e.what());
    }
    return det;
}

DetectionDump load_detection_dump(std::istream& in) {
    DetectionDump dump;
    std::string line;
    long line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(e.what(), line_no);
        }
        if (!have_header) {
            if (!j.contains("classes") || !j["classes"].is_array()) throw SchemaError("classes", "header record");
            dump.classes = j["classes"].get<std::vector<std::string>>();
            have_header = true;
            continue;
        }
        DetectionRecord record;
        try {
            record.checkpoint_id = j.at("checkpoint").get<std::string>();
            record.image_id = j.at("image").get<std::string>();
        } catch (const json::exception&) {
            throw SchemaError("checkpoint/image", "line " + std::to_string(line_no));
        }
        if (!j.contains("detections") || !j["detections"].is_array())
            throw SchemaError("detections", "line " + std::to_string(line_no));
        for (const auto& d : j["detections"]) record.detections.push_back(detection_from_json(d, dump.classes.size()));

        DetectionDump::Key key{record.checkpoint_id, record.image_id};
        if (dump.records.count(key))
            throw DuplicateRecordError("duplicate record (" + key.first + ", " + key.second + ") at line " +
                                       std::to_string(line_no));
        if (std::find(dump.checkpoints.begin(), dump.checkpoints.end(), key.first) == dump.checkpoints.end())
            dump.checkpoints.push_back(key.first);
        dump.records.emplace(std::move(key), std::move(record));
    }
    return dump;
}

void write_detection_dump(const DetectionDump& dump, std::ostream& out) {
    out << json{{"classes", dump.classes}}.dump() << '\n';
    for (const auto& [key, record] : dump.records) {
        json dets = json::array();
        for (const auto& d : record.detections) dets.push_back(detection_to_json(d));
        out << json{{"checkpoint", record.checkpoint_id}, {"image", record.image_id}, {"detections", dets}}.dump()
            << '\n';
    }
}

}  // namespace alod
