#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "alod/detector.hpp"

namespace alod::testing {

/// Fixed per-image outputs; records every update it receives.
class ScriptedDetector final : public DetectorAdapter {
public:
    explicit ScriptedDetector(std::vector<std::string> classes) : classes_(std::move(classes)) {}

    std::map<std::string, std::vector<Detection>> outputs;
    std::vector<std::pair<std::size_t, std::vector<std::string>>> updates;

    std::vector<Detection> detect(const std::string& id) const override {
        auto it = outputs.find(id);
        return it == outputs.end() ? std::vector<Detection>{} : it->second;
    }
    void update(std::span<const ImageAnnotation> old_pool, std::span<const ImageAnnotation> batch) override {
        std::vector<std::string> ids;
        for (const auto& a : batch) ids.push_back(a.image_id);
        updates.emplace_back(old_pool.size(), std::move(ids));
    }
    const std::vector<std::string>& class_list() const override { return classes_; }
    nlohmann::json save_state() const override { return {{"updates", updates.size()}}; }
    void load_state(const nlohmann::json&) override {}

private:
    std::vector<std::string> classes_;
};

/// Detection whose 1-vs-2 margin score is exactly `v` (v in [0, 1]).
inline Detection with_margin_score(double v) {
    double gap = 1.0 - std::sqrt(v);
    return {{0.5, 0.5, 0.2, 0.2}, 0.9, Distribution{(1 + gap) / 2, (1 - gap) / 2}, false};
}

}  // namespace alod::testing
