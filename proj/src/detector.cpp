#include "alod/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "alod/errors.hpp"
#include "alod/log.hpp"
#include "alod/random.hpp"

namespace alod {

void MixSchedule::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mix.lambda must lie in [0, 1]");
    if (iterations < 1) throw ConfigError("mix.iterations must be positive");
    if (minibatch_size < 1) throw ConfigError("mix.minibatch_size must be positive");
}

std::vector<Minibatch> mixed_minibatch(std::size_t old_size, std::size_t new_size, const MixSchedule& schedule,
                                       std::uint64_t seed) {
    schedule.validate();
    if (old_size == 0 && new_size == 0) throw EmptyPoolError();

    std::mt19937_64 rng(seed);
    std::bernoulli_distribution pick_old(schedule.lambda);
    std::uniform_int_distribution<std::size_t> old_index(0, old_size == 0 ? 0 : old_size - 1);
    std::uniform_int_distribution<std::size_t> new_index(0, new_size == 0 ? 0 : new_size - 1);

    std::vector<Minibatch> out(static_cast<std::size_t>(schedule.iterations));
    for (auto& batch : out) {
        batch.reserve(static_cast<std::size_t>(schedule.minibatch_size));
        for (int slot = 0; slot < schedule.minibatch_size; ++slot) {
            bool from_old = new_size == 0 || (old_size != 0 && pick_old(rng));
            batch.push_back({from_old, from_old ? old_index(rng) : new_index(rng)});
        }
    }
    return out;
}

// Replay

std::vector<Detection> replay_detect(const DetectionDump& dump, const std::string& checkpoint_id,
                                     const std::string& image_id) {
    auto it = dump.records.find({checkpoint_id, image_id});
    if (it == dump.records.end())
        throw MissingRecordError("no detections for (" + checkpoint_id + ", " + image_id + ")");
    return it->second.detections;
}

ReplayDetector::ReplayDetector(DetectionDump dump, std::vector<std::string> checkpoint_sequence)
    : dump_(std::move(dump)), sequence_(std::move(checkpoint_sequence)) {
    if (sequence_.empty()) sequence_ = dump_.checkpoints;
    if (sequence_.empty()) throw ConfigError("replay detector needs at least one checkpoint");
}

std::vector<Detection> ReplayDetector::detect(const std::string& image_id) const {
    return replay_detect(dump_, current_checkpoint(), image_id);
}

void ReplayDetector::update(std::span<const ImageAnnotation>, std::span<const ImageAnnotation>) {
    if (position_ + 1 < sequence_.size()) {
        ++position_;
    } else {
        log_warning("replay detector already at final checkpoint '" + sequence_.back() + "'");
    }
}

nlohmann::json ReplayDetector::save_state() const {
    return {{"kind", "replay"}, {"position", position_}, {"checkpoint", current_checkpoint()}};
}

void ReplayDetector::load_state(const nlohmann::json& state) {
    auto position = state.at("position").get<std::size_t>();
    if (position >= sequence_.size()) throw SnapshotError("replay position beyond checkpoint sequence");
    position_ = position;
}

// Synthetic

void SynthParams::validate() const {
    if (!(0 <= p0 && p0 <= p_max && p_max <= 1)) throw ConfigError("synthetic: need 0 <= p0 <= p_max <= 1");
    if (!(tau > 0)) throw ConfigError("synthetic: tau must be positive");
    if (!(0 <= miss_min && miss_min <= miss0 && miss0 <= 1))
        throw ConfigError("synthetic: need 0 <= miss_min <= miss0 <= 1");
    if (distractor_rate < 0 || loc_noise < 0) throw ConfigError("synthetic: negative rate or noise");
}

double true_class_mass(const SynthParams& p, double n) {
    return p.p0 + (p.p_max - p.p0) * (1.0 - std::exp(-n / p.tau));
}

double miss_rate(const SynthParams& p, double n) {
    return p.miss_min + (p.miss0 - p.miss_min) * std::exp(-n / p.tau);
}

namespace {

NormalizedBox clip_to_unit(double x0, double y0, double x1, double y1) {
    x0 = std::clamp(x0, 0.0, 1.0);
    y0 = std::clamp(y0, 0.0, 1.0);
    x1 = std::clamp(x1, 0.0, 1.0);
    y1 = std::clamp(y1, 0.0, 1.0);
    return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

Distribution near_uniform(std::size_t k, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> wobble(0.9, 1.1);
    Eigen::VectorXd v(static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = wobble(rng);
    return Distribution(v / v.sum());
}

}  // namespace

std::vector<Detection> synth_detect(const ImageAnnotation& annotation, const SkillState& skill,
                                    const std::vector<std::string>& classes, std::uint64_t seed) {
    const auto& params = skill.params;
    const std::size_t k = classes.size();
    if (k < 2) throw DimensionError("synthetic detector needs at least 2 classes");
    auto index_of = [&](const std::string& name) -> std::optional<std::size_t> {
        auto it = std::find(classes.begin(), classes.end(), name);
        if (it == classes.end()) return std::nullopt;
        return static_cast<std::size_t>(it - classes.begin());
    };

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, params.loc_noise > 0 ? params.loc_noise : 1.0);
    auto noise = [&] { return params.loc_noise > 0 ? jitter(rng) : 0.0; };
    const double w = annotation.width > 0 ? annotation.width : 1.0;
    const double h = annotation.height > 0 ? annotation.height : 1.0;

    std::vector<Detection> out;
    for (const auto& box : annotation.boxes) {
        auto truth = index_of(box.class_name);
        double seen = skill.seen(box.class_name);
        // Draw every variate unconditionally so the stream does not depend on outcomes.
        double miss_draw = unit(rng);
        double conf_draw = unit(rng);
        double dx = noise(), dy = noise(), dw = noise(), dh = noise();

        std::vector<std::size_t> confusion;
        if (auto it = params.confusions.find(box.class_name); it != params.confusions.end())
            for (const auto& name : it->second)
                if (auto idx = index_of(name); idx && idx != truth) confusion.push_back(*idx);
        if (confusion.empty())
            for (std::size_t i = 0; i < k; ++i)
                if (!truth || i != *truth) confusion.push_back(i);

        Eigen::VectorXd mass = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
        double correct = truth ? true_class_mass(params, seen) : 0.0;
        std::uniform_real_distribution<double> spread(0.8, 1.2);
        Eigen::VectorXd share(static_cast<Eigen::Index>(confusion.size()));
        for (Eigen::Index i = 0; i < share.size(); ++i) share[i] = spread(rng);
        share *= (1.0 - correct) / share.sum();
        for (std::size_t i = 0; i < confusion.size(); ++i) mass[static_cast<Eigen::Index>(confusion[i])] += share[static_cast<Eigen::Index>(i)];
        if (truth) mass[static_cast<Eigen::Index>(*truth)] += correct;

        if (miss_draw < miss_rate(params, truth ? seen : 0.0)) continue;

        double cx = (box.xmin - 1 + box.xmax) / (2 * w) + dx;
        double cy = (box.ymin - 1 + box.ymax) / (2 * h) + dy;
        double bw = std::max(0.01, (box.xmax - box.xmin + 1) / w + dw);
        double bh = std::max(0.01, (box.ymax - box.ymin + 1) / h + dh);

        Detection det;
        det.box = clip_to_unit(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2);
        det.confidence = 0.5 + 0.5 * conf_draw;
        det.dist = Distribution(mass / mass.sum());
        det.unknown = det.dist.scores().maxCoeff() < params.classification_threshold;
        out.push_back(std::move(det));
    }

    std::poisson_distribution<int> distractors(params.distractor_rate);
    int extra = params.distractor_rate > 0 ? distractors(rng) : 0;
    for (int i = 0; i < extra; ++i) {
        double cx = 0.1 + 0.8 * unit(rng);
        double cy = 0.1 + 0.8 * unit(rng);
        double bw = 0.05 + 0.25 * unit(rng);
        double bh = 0.05 + 0.25 * unit(rng);
        Detection det;
        det.box = clip_to_unit(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2);
        det.confidence = 0.1 + 0.5 * unit(rng);
        det.dist = near_uniform(k, rng);
        det.unknown = det.dist.scores().maxCoeff() < params.classification_threshold;
        out.push_back(std::move(det));
    }
    return out;
}

SkillState synth_update(SkillState skill, std::size_t old_pool_size, std::span<const ImageAnnotation> new_batch,
                        const MixSchedule& schedule, std::uint64_t seed) {
    if (new_batch.empty()) return skill;
    auto draws = mixed_minibatch(old_pool_size, new_batch.size(), schedule, seed);

    const double slots = static_cast<double>(schedule.iterations) * schedule.minibatch_size;
    const double p_new = old_pool_size == 0 ? 1.0 : 1.0 - schedule.lambda;
    const double per_item = slots * p_new / static_cast<double>(new_batch.size());
    if (per_item <= 0) return skill;

    for (const auto& minibatch : draws)
        for (const auto& draw : minibatch) {
            if (draw.from_old) continue;
            for (const auto& box : new_batch[draw.index].boxes) skill.per_class_seen[box.class_name] += 1.0 / per_item;
        }
    return skill;
}

SyntheticDetector::SyntheticDetector(DatasetIndex world, std::vector<std::string> classes, SkillState skill,
                                     MixSchedule schedule, std::uint64_t seed)
    : world_(std::move(world)),
      classes_(std::move(classes)),
      skill_(std::move(skill)),
      schedule_(schedule),
      seed_(seed) {
    skill_.params.validate();
    schedule_.validate();
}

std::vector<Detection> SyntheticDetector::detect(const std::string& image_id) const {
    auto it = world_.images.find(image_id);
    if (it == world_.images.end()) throw MissingRecordError("synthetic detector has no image '" + image_id + "'");
    return synth_detect(it->second, skill_, classes_,
                        derive_seed(seed_, "detect", {fnv1a(image_id), static_cast<std::uint64_t>(updates_)}));
}

void SyntheticDetector::update(std::span<const ImageAnnotation> old_pool, std::span<const ImageAnnotation> new_batch) {
    for (const auto& annotation : new_batch)
        for (const auto& box : annotation.boxes)
            if (std::find(classes_.begin(), classes_.end(), box.class_name) == classes_.end())
                classes_.push_back(box.class_name);
    skill_ = synth_update(std::move(skill_), old_pool.size(), new_batch, schedule_,
                          derive_seed(seed_, "update", {static_cast<std::uint64_t>(updates_)}));
    ++updates_;
}

nlohmann::json SyntheticDetector::save_state() const {
    return {{"kind", "synthetic"}, {"classes", classes_}, {"per_class_seen", skill_.per_class_seen}, {"updates", updates_}};
}

void SyntheticDetector::load_state(const nlohmann::json& state) {
    try {
        classes_ = state.at("classes").get<std::vector<std::string>>();
        skill_.per_class_seen = state.at("per_class_seen").get<std::map<std::string, double>>();
        updates_ = state.at("updates").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw SnapshotError(std::string("synthetic detector state: ") + e.what());
    }
}

}  // namespace alod
