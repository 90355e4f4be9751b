#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "alod/annotation.hpp"
#include "alod/dump.hpp"
#include "alod/scoring.hpp"

namespace alod {

/// Stand-in for the detection model. detect() is a pure function of the
/// adapter state; update() must not overlap any detect().
class DetectorAdapter {
public:
    virtual ~DetectorAdapter() = default;

    virtual std::vector<Detection> detect(const std::string& image_id) const = 0;
    virtual void update(std::span<const ImageAnnotation> old_pool, std::span<const ImageAnnotation> new_batch) = 0;
    virtual const std::vector<std::string>& class_list() const = 0;

    virtual nlohmann::json save_state() const = 0;
    virtual void load_state(const nlohmann::json& state) = 0;
};

/// Rehearsal schedule for one incremental update.
struct MixSchedule {
    double lambda = 0.5;
    int iterations = 100;
    int minibatch_size = 64;

    void validate() const;
    friend bool operator==(const MixSchedule&, const MixSchedule&) = default;
};

struct MixDraw {
    bool from_old = false;
    std::size_t index = 0;
};

using Minibatch = std::vector<MixDraw>;

/// `iterations` minibatches; each slot draws from the old pool with
/// probability lambda (else the new batch), uniformly with replacement within
/// the pool. An empty side is never drawn from.
std::vector<Minibatch> mixed_minibatch(std::size_t old_size, std::size_t new_size, const MixSchedule& schedule,
                                       std::uint64_t seed);

template <typename T>
std::vector<Minibatch> mixed_minibatch(std::span<const T> old_pool, std::span<const T> new_batch,
                                       const MixSchedule& schedule, std::uint64_t seed) {
    return mixed_minibatch(old_pool.size(), new_batch.size(), schedule, seed);
}

/// Replays stored detections; each update() moves one step along the
/// configured checkpoint sequence and then stays on the last one.
class ReplayDetector final : public DetectorAdapter {
public:
    ReplayDetector(DetectionDump dump, std::vector<std::string> checkpoint_sequence);

    std::vector<Detection> detect(const std::string& image_id) const override;
    void update(std::span<const ImageAnnotation> old_pool, std::span<const ImageAnnotation> new_batch) override;
    const std::vector<std::string>& class_list() const override { return dump_.classes; }

    nlohmann::json save_state() const override;
    void load_state(const nlohmann::json& state) override;

    const std::string& current_checkpoint() const { return sequence_[position_]; }

private:
    DetectionDump dump_;
    std::vector<std::string> sequence_;
    std::size_t position_ = 0;
};

std::vector<Detection> replay_detect(const DetectionDump& dump, const std::string& checkpoint_id,
                                     const std::string& image_id);

struct SynthParams {
    double p0 = 0.2;
    double p_max = 0.9;
    double tau = 40.0;
    double miss0 = 0.7;
    double miss_min = 0.1;
    double distractor_rate = 0.3;
    double loc_noise = 0.02;
    double classification_threshold = 0.25;
    /// Classes each class is mistaken for while it is still unfamiliar.
    std::map<std::string, std::vector<std::string>> confusions;

    void validate() const;
    friend bool operator==(const SynthParams&, const SynthParams&) = default;
};

struct SkillState {
    /// Boxes absorbed per class (real-valued, see synth_update).
    std::map<std::string, double> per_class_seen;
    SynthParams params;

    double seen(const std::string& name) const {
        auto it = per_class_seen.find(name);
        return it == per_class_seen.end() ? 0.0 : it->second;
    }
    friend bool operator==(const SkillState&, const SkillState&) = default;
};

/// p0 + (p_max - p0)(1 - exp(-n/tau)).
double true_class_mass(const SynthParams& params, double boxes_seen);
/// miss_min + (miss0 - miss_min) exp(-n/tau).
double miss_rate(const SynthParams& params, double boxes_seen);

/// Simulated detector output for one image over `classes`.
std::vector<Detection> synth_detect(const ImageAnnotation& annotation, const SkillState& skill,
                                    const std::vector<std::string>& classes, std::uint64_t seed);

/// Absorbs the new-batch draws of a λ-mixed schedule. Each draw of a new image
/// adds its box counts divided by the expected number of draws per new image,
/// so the expected increment is the batch's true box count.
SkillState synth_update(SkillState skill, std::size_t old_pool_size, std::span<const ImageAnnotation> new_batch,
                        const MixSchedule& schedule, std::uint64_t seed);

class SyntheticDetector final : public DetectorAdapter {
public:
    /// `world` holds the ground truth for every image the detector may see.
    SyntheticDetector(DatasetIndex world, std::vector<std::string> classes, SkillState skill, MixSchedule schedule,
                      std::uint64_t seed);

    std::vector<Detection> detect(const std::string& image_id) const override;
    void update(std::span<const ImageAnnotation> old_pool, std::span<const ImageAnnotation> new_batch) override;
    const std::vector<std::string>& class_list() const override { return classes_; }

    nlohmann::json save_state() const override;
    void load_state(const nlohmann::json& state) override;

    const SkillState& skill() const { return skill_; }
    int updates() const { return updates_; }

private:
    DatasetIndex world_;
    std::vector<std::string> classes_;
    SkillState skill_;
    MixSchedule schedule_;
    std::uint64_t seed_;
    int updates_ = 0;
};

}  // namespace alod
