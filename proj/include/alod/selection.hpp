#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "alod/annotation.hpp"
#include "alod/detector.hpp"
#include "alod/evaluation.hpp"
#include "alod/scoring.hpp"

namespace alod {

struct UnlabeledBatch {
    int batch_id = 0;
    std::vector<std::string> image_ids;

    friend bool operator==(const UnlabeledBatch&, const UnlabeledBatch&) = default;
};

/// Either the seeded random baseline or an aggregation metric.
struct SelectionMethod {
    bool random = false;
    AggregationMethod metric;

    static SelectionMethod parse(const std::string& text);
    std::string name() const;
    friend bool operator==(const SelectionMethod&, const SelectionMethod&) = default;
};

struct ExperimentState {
    /// Labeled pool in insertion order (initial known-class images first).
    std::vector<ImageAnnotation> labeled;
    std::vector<UnlabeledBatch> unlabeled_batches;
    std::vector<std::string> leftover;
    ClassCounts counts;
    int step = 0;
    std::uint64_t seed = 0;
    /// Images moved out of the unlabeled pool so far.
    long samples_labeled = 0;

    /// Labeled pool + initial counts; the unlabeled pool is partitioned by seed.
    static ExperimentState initial(std::vector<ImageAnnotation> initial_labeled,
                                   const std::vector<std::string>& pool_ids, int batch_size, std::uint64_t seed);

    const UnlabeledBatch* find_batch(int batch_id) const;
    bool exhausted() const { return unlabeled_batches.empty(); }

    friend bool operator==(const ExperimentState&, const ExperimentState&) = default;
};

nlohmann::json state_to_json(const ExperimentState& state);
ExperimentState state_from_json(const nlohmann::json& j);

struct SelectionRecord {
    int step = 0;
    int batch_id = 0;
    double batch_value = 0;
    std::map<std::string, double> per_image_scores;
    SelectionMethod method;

    friend bool operator==(const SelectionRecord&, const SelectionRecord&) = default;
};

nlohmann::json record_to_json(const SelectionRecord& record);
SelectionRecord record_from_json(const nlohmann::json& j);

struct Partition {
    std::vector<UnlabeledBatch> batches;
    std::vector<std::string> leftover;
};

/// Seeded shuffle into floor(n / batch_size) full batches; the remainder is
/// left over and never selected.
Partition partition_into_batches(std::vector<std::string> image_ids, int batch_size, std::uint64_t seed);

double batch_value(const UnlabeledBatch& batch, const std::map<std::string, double>& image_scores);

/// Highest-valued remaining batch, lowest id on ties.
int select_best_batch(const ExperimentState& state, const std::map<int, double>& scores);

/// Uniform choice among remaining batches keyed by (seed, step).
int select_random_batch(const ExperimentState& state);

/// Supplies Y_best. Implementations may throw OracleTimeout.
class AnnotationOracle {
public:
    virtual ~AnnotationOracle() = default;
    virtual std::vector<ImageAnnotation> annotate(const std::vector<std::string>& image_ids) = 0;
};

/// Answers with the dataset ground truth.
class DatasetOracle final : public AnnotationOracle {
public:
    explicit DatasetOracle(const DatasetIndex& dataset) : dataset_(dataset) {}
    std::vector<ImageAnnotation> annotate(const std::vector<std::string>& image_ids) override;

private:
    const DatasetIndex& dataset_;
};

struct ScoringOptions {
    bool include_unknown = true;
};

/// Scores every remaining image and picks the batch to label next.
SelectionRecord propose_selection(const ExperimentState& state, const DetectorAdapter& detector,
                                  const SelectionMethod& method, const ScoringOptions& options = {});

/// Applies labels for a selected batch: updates the detector with (old pool,
/// new batch), then moves the batch into the labeled pool.
ExperimentState commit_batch(const ExperimentState& state, DetectorAdapter& detector, int batch_id,
                             std::vector<ImageAnnotation> labels);

struct StepResult {
    ExperimentState state;
    SelectionRecord record;
};

StepResult exploration_step(const ExperimentState& state, DetectorAdapter& detector, AnnotationOracle& oracle,
                            const SelectionMethod& method, const ScoringOptions& options = {});

/// Evaluates the current detector on the validation set.
using Evaluator = std::function<EvaluationResult(const DetectorAdapter&)>;

struct ExplorationOptions {
    int eval_every = 5;
    /// Stop after this many selected batches (unbounded when empty).
    std::optional<int> max_batches;
    ScoringOptions scoring;
};

struct ExplorationResult {
    ExperimentState state;
    std::vector<SelectionRecord> records;
    LearningCurve curve;
};

/// Checkpoint of the current detector at the state's sample count.
CurveCheckpoint make_checkpoint(const ExperimentState& state, const DetectorAdapter& detector,
                                const Evaluator& evaluate);

/// Called after each completed step with the cumulative result.
using StepCallback = std::function<void(const ExplorationResult&)>;

/// Loops exploration steps until the pool is exhausted or the budget is spent,
/// checkpointing at 0 samples, every `eval_every` steps and at the end.
ExplorationResult run_exploration(ExperimentState state, DetectorAdapter& detector, AnnotationOracle& oracle,
                                  const SelectionMethod& method, const Evaluator& evaluate,
                                  const ExplorationOptions& options, const StepCallback& on_step = {});

/// Same loop, continuing an interrupted run. Stops early once `stop_after`
/// total steps have been taken.
ExplorationResult continue_exploration(ExplorationResult progress, DetectorAdapter& detector,
                                       AnnotationOracle& oracle, const SelectionMethod& method,
                                       const Evaluator& evaluate, const ExplorationOptions& options,
                                       const StepCallback& on_step = {}, std::optional<int> stop_after = std::nullopt);

/// True if the run has nothing left to do under `options`.
bool exploration_finished(const ExperimentState& state, const ExplorationOptions& options);

}  // namespace alod
