#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "alod/scoring.hpp"

namespace alod {

struct DetectionRecord {
    std::string checkpoint_id;
    std::string image_id;
    std::vector<Detection> detections;
};

/// Line-delimited detection dump: a class-list header followed by one record
/// per (checkpoint, image).
struct DetectionDump {
    using Key = std::pair<std::string, std::string>;

    std::vector<std::string> classes;
    std::map<Key, DetectionRecord> records;

    /// Checkpoint ids in order of first appearance in the stream.
    std::vector<std::string> checkpoints;
};

nlohmann::json detection_to_json(const Detection& det);
/// Throws SchemaError on a missing field or a score vector whose length is not `num_classes`.
Detection detection_from_json(const nlohmann::json& j, std::size_t num_classes);

DetectionDump load_detection_dump(std::istream& in);
void write_detection_dump(const DetectionDump& dump, std::ostream& out);

}  // namespace alod
