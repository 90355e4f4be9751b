#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "alod/annotation.hpp"
#include "alod/detector.hpp"
#include "alod/evaluation.hpp"
#include "alod/selection.hpp"

namespace alod {

enum class DetectorKind { synthetic, replay };

struct ExperimentConfig {
    std::filesystem::path train_annotations;
    std::filesystem::path val_annotations;
    std::optional<std::filesystem::path> dump;
    std::vector<std::string> checkpoints;
    DetectorKind detector = DetectorKind::synthetic;
    std::vector<std::string> new_classes;
    std::vector<SelectionMethod> methods{SelectionMethod{}};
    int batch_size = 10;
    int eval_every = 5;
    std::optional<int> max_batches;
    std::vector<std::uint64_t> seeds{1};
    MixSchedule mix;
    SynthParams synthetic;
    bool include_unknown = true;
    double iou_threshold = kDefaultIouThreshold;
    std::filesystem::path output_dir = "alod-out";
    std::optional<std::filesystem::path> image_dir;

    /// Throws ConfigError on the first violated constraint.
    void validate() const;
    ExplorationOptions exploration_options() const;
};

/// Relative paths are resolved against `base_dir`. Missing fields take defaults.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Hash of everything that affects results (output_dir excluded).
std::uint64_t config_hash(const ExperimentConfig& config);

/// Loaded and split data shared by every run of a config.
struct ExperimentData {
    DatasetIndex train;
    DatasetIndex val;
    ClassSplit train_split;
    ClassSplit val_split;
    std::vector<std::string> all_classes;
    std::optional<DetectionDump> dump;

    static ExperimentData load(const ExperimentConfig& config);

    /// Fresh state for a seed: known-class training images labeled, new-class
    /// training images partitioned.
    ExperimentState initial_state(const ExperimentConfig& config, std::uint64_t seed) const;
    std::unique_ptr<DetectorAdapter> make_detector(const ExperimentConfig& config, std::uint64_t seed) const;
    Evaluator evaluator(const ExperimentConfig& config) const;
};

struct MethodSummary {
    SelectionMethod method;
    std::vector<std::uint64_t> seeds;
    std::vector<long> samples;
    /// [seed][checkpoint], as read back from the emitted curve files.
    std::vector<std::vector<double>> map;
    std::vector<std::vector<double>> aulc;
    std::vector<double> map_mean, map_std, aulc_mean, aulc_std;

    double final_aulc_mean() const { return aulc_mean.empty() ? 0.0 : aulc_mean.back(); }
};

struct RunSummary {
    std::vector<MethodSummary> methods;
    /// False when a run was interrupted before finishing.
    bool complete = true;
};

struct RunOptions {
    /// Interrupt every run after this many steps (snapshots stay resumable).
    std::optional<int> stop_after;
};

std::filesystem::path run_directory(const ExperimentConfig& config, const SelectionMethod& method,
                                    std::uint64_t seed);

/// Runs every (method, seed) pair, writing curve.csv, selections.jsonl and
/// snapshot.json per run plus config.json and summary.csv at the top.
RunSummary run(const ExperimentConfig& config, const RunOptions& options = {});

struct ResumeOutcome {
    bool already_finished = false;
    ExplorationResult result;
};

/// Continues a run from its snapshot. The config defaults to the config.json
/// echoed two directories above the snapshot.
ResumeOutcome resume(const std::filesystem::path& snapshot_path,
                     std::optional<std::filesystem::path> config_path = std::nullopt);

/// Recomputes summary statistics from per-run curve files.
RunSummary summarize(const ExperimentConfig& config);
void write_summary_csv(const RunSummary& summary, std::ostream& out);

}  // namespace alod
