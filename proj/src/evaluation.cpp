#include "alod/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "alod/errors.hpp"
#include "alod/log.hpp"

namespace alod {

double iou(const Rect& a, const Rect& b) {
    double area_a = a.area();
    double area_b = b.area();
    if (area_a <= 0 || area_b <= 0) {
        log_warning("iou on a zero-area box");
        return 0.0;
    }
    Rect inter{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
    double overlap = inter.area();
    return overlap / (area_a + area_b - overlap);
}

Rect to_rect(const GroundTruthBox& box, int width, int height) {
    double w = width > 0 ? width : 1.0;
    double h = height > 0 ? height : 1.0;
    return {(box.xmin - 1) / w, (box.ymin - 1) / h, box.xmax / w, box.ymax / h};
}

Rect to_rect(const NormalizedBox& box) {
    auto clip = [](double v) { return std::clamp(v, 0.0, 1.0); };
    return {clip(box.cx - box.w / 2), clip(box.cy - box.h / 2), clip(box.cx + box.w / 2), clip(box.cy + box.h / 2)};
}

MatchResult match_detections(std::span<const RankedDetection> dets, std::span<const GroundTruthRef> gts,
                             double iou_threshold) {
    MatchResult result;
    result.num_gt = static_cast<std::size_t>(
        std::count_if(gts.begin(), gts.end(), [](const GroundTruthRef& g) { return !g.difficult; }));

    std::vector<bool> taken(gts.size(), false);
    result.outcomes.reserve(dets.size());
    for (const auto& det : dets) {
        double best = -1;
        std::optional<std::size_t> best_gt;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].image_id != det.image_id) continue;
            if (!gts[g].difficult && taken[g]) continue;
            double overlap = iou(det.box, gts[g].box);
            if (overlap > best) {
                best = overlap;
                best_gt = g;
            }
        }
        MatchOutcome outcome;
        if (best_gt && best >= iou_threshold) {
            if (gts[*best_gt].difficult) {
                outcome.kind = MatchKind::Ignored;
            } else {
                outcome.kind = MatchKind::TruePositive;
                taken[*best_gt] = true;
            }
            outcome.gt_index = best_gt;
        }
        result.outcomes.push_back(outcome);
    }
    return result;
}

std::optional<double> average_precision(const MatchResult& match) {
    if (match.num_gt == 0) return std::nullopt;

    std::vector<double> recall{0.0};
    std::vector<double> precision{0.0};
    double tp = 0;
    double fp = 0;
    for (const auto& o : match.outcomes) {
        if (o.kind == MatchKind::Ignored) continue;
        (o.kind == MatchKind::TruePositive ? tp : fp) += 1;
        recall.push_back(tp / static_cast<double>(match.num_gt));
        precision.push_back(tp / (tp + fp));
    }
    recall.push_back(1.0);
    precision.push_back(0.0);

    Eigen::Map<Eigen::ArrayXd> rec(recall.data(), static_cast<Eigen::Index>(recall.size()));
    Eigen::Map<Eigen::ArrayXd> prec(precision.data(), static_cast<Eigen::Index>(precision.size()));
    for (Eigen::Index i = prec.size() - 2; i >= 0; --i) prec[i] = std::max(prec[i], prec[i + 1]);

    const Eigen::Index n = rec.size() - 1;
    Eigen::ArrayXd steps = rec.tail(n) - rec.head(n);
    return (steps * prec.tail(n)).sum();
}

double mean_average_precision(const std::map<std::string, std::optional<double>>& per_class_ap) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& [_, ap] : per_class_ap) {
        if (!ap) continue;
        sum += *ap;
        ++n;
    }
    if (n == 0) throw NoClassError();
    return sum / static_cast<double>(n);
}

EvaluationResult evaluate_detections(const DatasetIndex& ground_truth,
                                     const std::map<std::string, std::vector<Detection>>& detections,
                                     const std::vector<std::string>& detector_classes,
                                     const std::vector<std::string>& eval_classes, double iou_threshold) {
    std::map<std::string, std::vector<RankedDetection>> ranked;
    std::map<std::string, std::vector<GroundTruthRef>> gts;
    for (const auto& c : eval_classes) {
        ranked[c];
        gts[c];
    }

    for (const auto& [id, annotation] : ground_truth.images) {
        for (const auto& box : annotation.boxes)
            if (auto it = gts.find(box.class_name); it != gts.end())
                it->second.push_back({id, to_rect(box, annotation.width, annotation.height), box.difficult});
    }
    for (const auto& [id, dets] : detections) {
        for (const auto& det : dets) {
            if (det.unknown) continue;
            auto best = static_cast<std::size_t>(det.dist.argmax());
            if (best >= detector_classes.size()) throw DimensionError("detection has more scores than classes");
            auto it = ranked.find(detector_classes[best]);
            if (it == ranked.end()) continue;
            it->second.push_back({id, det.confidence * det.dist[static_cast<Eigen::Index>(best)], to_rect(det.box)});
        }
    }

    EvaluationResult result;
    for (const auto& c : eval_classes) {
        auto& dets = ranked[c];
        std::stable_sort(dets.begin(), dets.end(),
                         [](const RankedDetection& a, const RankedDetection& b) { return a.confidence > b.confidence; });
        result.per_class_ap[c] = average_precision(match_detections(dets, gts[c], iou_threshold));
    }
    bool any = std::any_of(result.per_class_ap.begin(), result.per_class_ap.end(),
                           [](const auto& kv) { return kv.second.has_value(); });
    result.map = any ? mean_average_precision(result.per_class_ap) : 0.0;
    return result;
}

void LearningCurve::append(CurveCheckpoint checkpoint) {
    if (!checkpoints.empty() && checkpoint.samples_labeled <= checkpoints.back().samples_labeled)
        throw InvariantError("learning curve checkpoints must strictly increase in samples");
    checkpoints.push_back(std::move(checkpoint));
}

std::vector<double> LearningCurve::map_values() const {
    std::vector<double> values;
    values.reserve(checkpoints.size());
    for (const auto& c : checkpoints) values.push_back(c.map);
    return values;
}

std::vector<double> aulc(std::span<const double> map_values) {
    if (map_values.size() < 2) throw InsufficientDataError("AULC needs at least 2 checkpoints");
    Eigen::Map<const Eigen::ArrayXd> m(map_values.data(), static_cast<Eigen::Index>(map_values.size()));
    const Eigen::Index n = m.size() - 1;
    Eigen::ArrayXd trapezoids = (m.head(n) + m.tail(n)) / 2.0;
    std::vector<double> cumulative(map_values.size(), 0.0);
    std::partial_sum(trapezoids.begin(), trapezoids.end(), cumulative.begin() + 1);
    return cumulative;
}

std::vector<double> aulc(const LearningCurve& curve) {
    auto values = curve.map_values();
    return aulc(std::span<const double>(values));
}

namespace {
std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}
}  // namespace

void write_curve_csv(const LearningCurve& curve, const std::vector<std::string>& classes, std::ostream& out) {
    out << "samples";
    for (const auto& c : classes) out << ',' << c;
    out << ",mAP,AULC\n";
    std::vector<double> area = curve.checkpoints.size() >= 2 ? aulc(curve) : std::vector<double>(curve.checkpoints.size(), 0.0);
    for (std::size_t i = 0; i < curve.checkpoints.size(); ++i) {
        const auto& cp = curve.checkpoints[i];
        out << cp.samples_labeled;
        for (const auto& c : classes) {
            auto it = cp.per_class_ap.find(c);
            out << ',' << (it != cp.per_class_ap.end() && it->second ? fixed4(*it->second) : std::string("nan"));
        }
        out << ',' << fixed4(cp.map) << ',' << fixed4(area[i]) << '\n';
    }
}

CsvCurve read_curve_csv(std::istream& in) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    CsvCurve curve;
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("header", "empty curve file");
    auto header = split(line);
    if (header.size() < 3 || header.front() != "samples" || header[header.size() - 2] != "mAP" ||
        header.back() != "AULC")
        throw SchemaError("header", "unexpected curve header");
    curve.classes.assign(header.begin() + 1, header.end() - 2);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != header.size()) throw SchemaError("row", "column count mismatch");
        curve.samples.push_back(std::stol(cells.front()));
        curve.map.push_back(std::stod(cells[cells.size() - 2]));
        curve.aulc.push_back(std::stod(cells.back()));
    }
    return curve;
}

}  // namespace alod
