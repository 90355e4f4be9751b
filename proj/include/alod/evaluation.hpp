#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "alod/annotation.hpp"
#include "alod/scoring.hpp"

namespace alod {

/// Axis-aligned corner box in continuous coordinates.
struct Rect {
    double x0 = 0;
    double y0 = 0;
    double x1 = 0;
    double y1 = 0;

    double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
};

/// Intersection over union; zero-area boxes give 0 with a warning.
double iou(const Rect& a, const Rect& b);

/// Normalized continuous extent of an inclusive 1-based pixel box.
Rect to_rect(const GroundTruthBox& box, int width, int height);
/// Corner form of a center-format box, clipped to the unit square.
Rect to_rect(const NormalizedBox& box);

struct RankedDetection {
    std::string image_id;
    double confidence = 0;
    Rect box;
};

struct GroundTruthRef {
    std::string image_id;
    Rect box;
    bool difficult = false;
};

enum class MatchKind { TruePositive, FalsePositive, Ignored };

struct MatchOutcome {
    MatchKind kind = MatchKind::FalsePositive;
    std::optional<std::size_t> gt_index;
};

struct MatchResult {
    /// One outcome per detection, in the (confidence-descending) input order.
    std::vector<MatchOutcome> outcomes;
    /// Ground-truth count excluding difficult boxes.
    std::size_t num_gt = 0;
};

inline constexpr double kDefaultIouThreshold = 0.5;

/// Greedy single-class matching in input order; `dets` must be sorted by
/// descending confidence.
MatchResult match_detections(std::span<const RankedDetection> dets, std::span<const GroundTruthRef> gts,
                             double iou_threshold = kDefaultIouThreshold);

/// All-points interpolated AP. Empty when the class has no (non-difficult) GT.
std::optional<double> average_precision(const MatchResult& match);

/// Unweighted mean over classes that have an AP; throws NoClassError if none.
double mean_average_precision(const std::map<std::string, std::optional<double>>& per_class_ap);

struct EvaluationResult {
    std::map<std::string, std::optional<double>> per_class_ap;
    double map = 0;
};

/// Evaluates per-image detections (distributions over `detector_classes`) on the
/// classes in `eval_classes`. Unknown-flagged detections are not evaluated; each
/// remaining detection competes for its argmax class with score conf * p(argmax).
EvaluationResult evaluate_detections(const DatasetIndex& ground_truth,
                                     const std::map<std::string, std::vector<Detection>>& detections,
                                     const std::vector<std::string>& detector_classes,
                                     const std::vector<std::string>& eval_classes,
                                     double iou_threshold = kDefaultIouThreshold);

struct CurveCheckpoint {
    long samples_labeled = 0;
    std::map<std::string, std::optional<double>> per_class_ap;
    double map = 0;

    friend bool operator==(const CurveCheckpoint&, const CurveCheckpoint&) = default;
};

struct LearningCurve {
    std::vector<CurveCheckpoint> checkpoints;

    /// Throws InvariantError unless samples_labeled strictly increases.
    void append(CurveCheckpoint checkpoint);
    std::vector<double> map_values() const;

    friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

/// Cumulative trapezoidal area under the mAP sequence with unit spacing per
/// checkpoint; entry i is the area up to checkpoint i (entry 0 is 0).
std::vector<double> aulc(std::span<const double> map_values);
std::vector<double> aulc(const LearningCurve& curve);

/// `samples,<classes...>,mAP,AULC`, four decimals per float.
void write_curve_csv(const LearningCurve& curve, const std::vector<std::string>& classes, std::ostream& out);

struct CsvCurve {
    std::vector<std::string> classes;
    std::vector<long> samples;
    std::vector<double> map;
    std::vector<double> aulc;
};
CsvCurve read_curve_csv(std::istream& in);

}  // namespace alod
