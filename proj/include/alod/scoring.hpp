#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "alod/errors.hpp"

namespace alod {

/// Tolerance on the unit-sum constraint of a class distribution.
inline constexpr double kDistributionTolerance = 1e-6;

/// Concentration of the symmetric Dirichlet prior behind the class weights.
inline constexpr double kDirichletAlpha = 1.0;

/// Probability vector over the active class list. Validated on construction and
/// never renormalised.
template <typename Scalar>
class ClassDistribution {
public:
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    ClassDistribution() = default;

    explicit ClassDistribution(Vector scores) : scores_(std::move(scores)) {
        if (scores_.size() < 2) throw DimensionError("class distribution needs at least 2 classes");
        if ((scores_.array() < Scalar(0)).any() || !scores_.allFinite())
            throw InvariantError("class distribution has a negative or non-finite entry");
        if (std::abs(static_cast<double>(scores_.sum()) - 1.0) > kDistributionTolerance)
            throw InvariantError("class distribution does not sum to 1");
    }

    ClassDistribution(std::initializer_list<Scalar> values)
        : ClassDistribution(Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size()))) {}

    static ClassDistribution from(std::span<const Scalar> values) {
        return ClassDistribution(Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
    }

    const Vector& scores() const noexcept { return scores_; }
    Eigen::Index size() const noexcept { return scores_.size(); }
    Scalar operator[](Eigen::Index i) const { return scores_[i]; }

    /// Index of the highest score; ties go to the lowest index.
    Eigen::Index argmax() const {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < scores_.size(); ++i)
            if (scores_[i] > scores_[best]) best = i;
        return best;
    }

    /// Indices of the two highest scores (first wins ties by lower index).
    std::pair<Eigen::Index, Eigen::Index> top_two() const {
        Eigen::Index first = argmax();
        Eigen::Index second = first == 0 ? 1 : 0;
        for (Eigen::Index i = 0; i < scores_.size(); ++i)
            if (i != first && scores_[i] > scores_[second]) second = i;
        return {first, second};
    }

    friend bool operator==(const ClassDistribution& a, const ClassDistribution& b) {
        return a.scores_.size() == b.scores_.size() && a.scores_ == b.scores_;
    }

private:
    Vector scores_;
};

/// Normalized center-format box, all fields in [0,1].
struct NormalizedBox {
    double cx = 0;
    double cy = 0;
    double w = 0;
    double h = 0;

    friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

template <typename Scalar>
struct BasicDetection {
    NormalizedBox box;
    Scalar confidence = 0;
    ClassDistribution<Scalar> dist;
    bool unknown = false;
};

using Distribution = ClassDistribution<double>;
using Detection = BasicDetection<double>;

/// Labeled box tally over a class list. `total` always equals the sum of
/// `per_class`; `num_classes` is the size of the class list it was built for.
struct ClassCounts {
    std::map<std::string, std::int64_t> per_class;
    std::int64_t total = 0;
    std::int64_t num_classes = 0;

    /// Zero counts for every class in `classes`.
    static ClassCounts over(const std::vector<std::string>& classes) {
        ClassCounts counts;
        for (const auto& c : classes) counts.per_class.emplace(c, 0);
        counts.num_classes = static_cast<std::int64_t>(counts.per_class.size());
        return counts;
    }

    /// Adds `n` instances, registering the class if needed.
    void add(const std::string& name, std::int64_t n = 1) {
        auto [it, inserted] = per_class.emplace(name, 0);
        it->second += n;
        total += n;
        if (inserted) ++num_classes;
    }

    /// Restriction to the active class list; classes outside it are dropped.
    ClassCounts restricted_to(const std::vector<std::string>& classes) const {
        ClassCounts out = over(classes);
        for (auto& [name, n] : out.per_class) {
            if (auto it = per_class.find(name); it != per_class.end()) n = it->second;
            out.total += n;
        }
        return out;
    }

    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

enum class Aggregation { Sum, Avg, Max };

struct AggregationMethod {
    Aggregation kind = Aggregation::Sum;
    bool weighted = false;

    friend bool operator==(const AggregationMethod&, const AggregationMethod&) = default;
};

/// 1-vs-2 margin value: (1 - (best - second best))^2.
template <typename Scalar>
Scalar margin_1vs2(const ClassDistribution<Scalar>& dist) {
    if (dist.size() < 2) throw DimensionError("margin needs at least 2 classes");
    auto [first, second] = dist.top_two();
    Scalar gap = dist[first] - dist[second];
    Scalar v = Scalar(1) - gap;
    return v * v;
}

/// Inverse Dirichlet posterior weight (total + K*alpha) / (count_c + alpha).
inline double class_weight(const ClassCounts& counts, std::string_view predicted_class) {
    auto it = counts.per_class.find(std::string(predicted_class));
    if (it == counts.per_class.end()) throw UnknownClassError(std::string(predicted_class));
    return (static_cast<double>(counts.total) + static_cast<double>(counts.num_classes) * kDirichletAlpha) /
           (static_cast<double>(it->second) + kDirichletAlpha);
}

/// Margin of one detection, multiplied by the weight of its argmax class when
/// `weighted`. `classes` names the entries of the distribution.
template <typename Scalar>
Scalar detection_value(const BasicDetection<Scalar>& det, const ClassCounts& counts,
                       const std::vector<std::string>& classes, bool weighted) {
    Scalar margin = margin_1vs2(det.dist);
    if (!weighted) return margin;
    if (static_cast<std::size_t>(det.dist.size()) != classes.size())
        throw DimensionError("distribution size does not match the class list");
    return static_cast<Scalar>(class_weight(counts, classes[static_cast<std::size_t>(det.dist.argmax())])) * margin;
}

/// Whole-image value from per-detection values. Empty images score zero under
/// every method.
template <typename Scalar>
Scalar aggregate_image(std::span<const Scalar> values, Aggregation method) {
    if (values.empty()) return Scalar(0);
    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> v(values.data(),
                                                               static_cast<Eigen::Index>(values.size()));
    switch (method) {
        case Aggregation::Sum: return v.sum();
        case Aggregation::Avg: return v.sum() / static_cast<Scalar>(v.size());
        case Aggregation::Max: return v.maxCoeff();
    }
    return Scalar(0);
}

template <typename Scalar>
Scalar aggregate_image(const std::vector<Scalar>& values, Aggregation method) {
    return aggregate_image(std::span<const Scalar>(values), method);
}

template <typename Scalar>
Scalar score_image(std::span<const BasicDetection<Scalar>> dets, const ClassCounts& counts,
                   const std::vector<std::string>& classes, AggregationMethod method, bool include_unknown) {
    std::vector<Scalar> values;
    values.reserve(dets.size());
    for (const auto& det : dets) {
        if (det.unknown && !include_unknown) continue;
        values.push_back(detection_value(det, counts, classes, method.weighted));
    }
    return aggregate_image(std::span<const Scalar>(values), method.kind);
}

template <typename Scalar>
Scalar score_image(const std::vector<BasicDetection<Scalar>>& dets, const ClassCounts& counts,
                   const std::vector<std::string>& classes, AggregationMethod method, bool include_unknown) {
    return score_image(std::span<const BasicDetection<Scalar>>(dets), counts, classes, method, include_unknown);
}

std::string to_string(AggregationMethod method);

}  // namespace alod
