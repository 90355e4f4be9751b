#include "alod/selection.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "alod/errors.hpp"
#include "alod/random.hpp"

namespace alod {

using nlohmann::json;

std::string to_string(AggregationMethod method) {
    std::string name = method.kind == Aggregation::Sum ? "sum" : method.kind == Aggregation::Avg ? "avg" : "max";
    return method.weighted ? name + "+w" : name;
}

SelectionMethod SelectionMethod::parse(const std::string& text) {
    std::string t;
    for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    t.erase(std::remove(t.begin(), t.end(), ' '), t.end());
    SelectionMethod m;
    if (t == "random") {
        m.random = true;
        return m;
    }
    if (t.size() > 2 && t.substr(t.size() - 2) == "+w") {
        m.metric.weighted = true;
        t.resize(t.size() - 2);
    }
    if (t == "sum")
        m.metric.kind = Aggregation::Sum;
    else if (t == "avg")
        m.metric.kind = Aggregation::Avg;
    else if (t == "max")
        m.metric.kind = Aggregation::Max;
    else
        throw ConfigError("unknown selection method '" + text + "'");
    return m;
}

std::string SelectionMethod::name() const { return random ? "random" : to_string(metric); }

ExperimentState ExperimentState::initial(std::vector<ImageAnnotation> initial_labeled,
                                         const std::vector<std::string>& pool_ids, int batch_size,
                                         std::uint64_t seed) {
    ExperimentState state;
    state.seed = seed;
    auto partition = partition_into_batches(pool_ids, batch_size, seed);
    state.unlabeled_batches = std::move(partition.batches);
    state.leftover = std::move(partition.leftover);
    for (const auto& annotation : initial_labeled)
        for (const auto& box : annotation.boxes) state.counts.add(box.class_name);
    state.labeled = std::move(initial_labeled);
    return state;
}

const UnlabeledBatch* ExperimentState::find_batch(int batch_id) const {
    for (const auto& b : unlabeled_batches)
        if (b.batch_id == batch_id) return &b;
    return nullptr;
}

Partition partition_into_batches(std::vector<std::string> image_ids, int batch_size, std::uint64_t seed) {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    std::mt19937_64 rng(derive_seed(seed, "partition"));
    // Fisher-Yates by hand: std::shuffle's draw pattern is library-specific.
    for (std::size_t i = image_ids.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(image_ids[i - 1], image_ids[j]);
    }
    Partition partition;
    const auto size = static_cast<std::size_t>(batch_size);
    const std::size_t full = image_ids.size() / size;
    for (std::size_t b = 0; b < full; ++b)
        partition.batches.push_back({static_cast<int>(b), {image_ids.begin() + static_cast<long>(b * size),
                                                           image_ids.begin() + static_cast<long>((b + 1) * size)}});
    partition.leftover.assign(image_ids.begin() + static_cast<long>(full * size), image_ids.end());
    return partition;
}

double batch_value(const UnlabeledBatch& batch, const std::map<std::string, double>& image_scores) {
    double total = 0;
    for (const auto& id : batch.image_ids) {
        auto it = image_scores.find(id);
        if (it == image_scores.end()) throw MissingScoreError("no score for image '" + id + "'");
        total += it->second;
    }
    return total;
}

int select_best_batch(const ExperimentState& state, const std::map<int, double>& scores) {
    if (state.unlabeled_batches.empty()) throw ExhaustedError();
    std::optional<int> best;
    double best_value = 0;
    for (const auto& batch : state.unlabeled_batches) {
        auto it = scores.find(batch.batch_id);
        if (it == scores.end()) throw MissingScoreError("no score for batch " + std::to_string(batch.batch_id));
        if (!best || it->second > best_value || (it->second == best_value && batch.batch_id < *best)) {
            best = batch.batch_id;
            best_value = it->second;
        }
    }
    return *best;
}

int select_random_batch(const ExperimentState& state) {
    if (state.unlabeled_batches.empty()) throw ExhaustedError();
    std::vector<int> ids;
    for (const auto& b : state.unlabeled_batches) ids.push_back(b.batch_id);
    std::sort(ids.begin(), ids.end());
    auto r = derive_seed(state.seed, "random-selection", {static_cast<std::uint64_t>(state.step)});
    return ids[static_cast<std::size_t>(r % ids.size())];
}

std::vector<ImageAnnotation> DatasetOracle::annotate(const std::vector<std::string>& image_ids) {
    std::vector<ImageAnnotation> out;
    out.reserve(image_ids.size());
    for (const auto& id : image_ids) {
        auto it = dataset_.images.find(id);
        if (it == dataset_.images.end()) throw MissingRecordError("oracle has no annotation for '" + id + "'");
        out.push_back(it->second);
    }
    return out;
}

SelectionRecord propose_selection(const ExperimentState& state, const DetectorAdapter& detector,
                                  const SelectionMethod& method, const ScoringOptions& options) {
    if (state.exhausted()) throw ExhaustedError();
    SelectionRecord record;
    record.step = state.step;
    record.method = method;
    if (method.random) {
        record.batch_id = select_random_batch(state);
        return record;
    }

    const auto& classes = detector.class_list();
    const ClassCounts counts = state.counts.restricted_to(classes);
    std::map<std::string, double> image_scores;
    std::map<int, double> batch_scores;
    for (const auto& batch : state.unlabeled_batches) {
        for (const auto& id : batch.image_ids)
            image_scores[id] = score_image(detector.detect(id), counts, classes, method.metric, options.include_unknown);
        batch_scores[batch.batch_id] = batch_value(batch, image_scores);
    }
    record.batch_id = select_best_batch(state, batch_scores);
    record.batch_value = batch_scores.at(record.batch_id);
    for (const auto& id : state.find_batch(record.batch_id)->image_ids) record.per_image_scores[id] = image_scores[id];
    return record;
}

ExperimentState commit_batch(const ExperimentState& state, DetectorAdapter& detector, int batch_id,
                             std::vector<ImageAnnotation> labels) {
    const UnlabeledBatch* batch = state.find_batch(batch_id);
    if (!batch) throw InvariantError("batch " + std::to_string(batch_id) + " is not unlabeled");

    std::map<std::string, ImageAnnotation> by_id;
    for (auto& label : labels) by_id.emplace(label.image_id, std::move(label));
    std::vector<ImageAnnotation> ordered;
    for (const auto& id : batch->image_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw InvariantError("missing labels for image '" + id + "'");
        ordered.push_back(std::move(it->second));
    }
    if (by_id.size() != batch->image_ids.size()) throw InvariantError("labels for images outside the batch");

    detector.update(state.labeled, ordered);

    ExperimentState next = state;
    next.unlabeled_batches.erase(std::find_if(next.unlabeled_batches.begin(), next.unlabeled_batches.end(),
                                              [&](const UnlabeledBatch& b) { return b.batch_id == batch_id; }));
    for (auto& annotation : ordered) {
        for (const auto& box : annotation.boxes) next.counts.add(box.class_name);
        next.labeled.push_back(std::move(annotation));
    }
    next.samples_labeled += static_cast<long>(batch->image_ids.size());
    ++next.step;
    return next;
}

StepResult exploration_step(const ExperimentState& state, DetectorAdapter& detector, AnnotationOracle& oracle,
                            const SelectionMethod& method, const ScoringOptions& options) {
    auto record = propose_selection(state, detector, method, options);
    std::vector<ImageAnnotation> labels;
    try {
        labels = oracle.annotate(state.find_batch(record.batch_id)->image_ids);
    } catch (const OracleTimeout& e) {
        throw StepAbortedError(std::string("annotation oracle timed out: ") + e.what());
    }
    return {commit_batch(state, detector, record.batch_id, std::move(labels)), std::move(record)};
}

CurveCheckpoint make_checkpoint(const ExperimentState& state, const DetectorAdapter& detector,
                                const Evaluator& evaluate) {
    CurveCheckpoint checkpoint;
    checkpoint.samples_labeled = state.samples_labeled;
    if (evaluate) {
        auto result = evaluate(detector);
        checkpoint.per_class_ap = std::move(result.per_class_ap);
        checkpoint.map = result.map;
    }
    return checkpoint;
}

bool exploration_finished(const ExperimentState& state, const ExplorationOptions& options) {
    return state.exhausted() || (options.max_batches && state.step >= *options.max_batches);
}

ExplorationResult run_exploration(ExperimentState state, DetectorAdapter& detector, AnnotationOracle& oracle,
                                  const SelectionMethod& method, const Evaluator& evaluate,
                                  const ExplorationOptions& options, const StepCallback& on_step) {
    ExplorationResult progress{std::move(state), {}, {}};
    return continue_exploration(std::move(progress), detector, oracle, method, evaluate, options, on_step);
}

ExplorationResult continue_exploration(ExplorationResult progress, DetectorAdapter& detector,
                                       AnnotationOracle& oracle, const SelectionMethod& method,
                                       const Evaluator& evaluate, const ExplorationOptions& options,
                                       const StepCallback& on_step, std::optional<int> stop_after) {
    if (options.eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (progress.curve.checkpoints.empty())
        progress.curve.append(make_checkpoint(progress.state, detector, evaluate));

    while (!exploration_finished(progress.state, options)) {
        if (stop_after && progress.state.step >= *stop_after) return progress;
        auto [next, record] = exploration_step(progress.state, detector, oracle, method, options.scoring);
        progress.state = std::move(next);
        progress.records.push_back(std::move(record));
        if (progress.state.step % options.eval_every == 0 || exploration_finished(progress.state, options))
            progress.curve.append(make_checkpoint(progress.state, detector, evaluate));
        if (on_step) on_step(progress);
    }
    if (progress.curve.checkpoints.back().samples_labeled != progress.state.samples_labeled)
        progress.curve.append(make_checkpoint(progress.state, detector, evaluate));
    return progress;
}

// Serialization

namespace {

json annotation_to_json(const ImageAnnotation& a) {
    json boxes = json::array();
    for (const auto& b : a.boxes)
        boxes.push_back({{"class", b.class_name}, {"bbox", {b.xmin, b.ymin, b.xmax, b.ymax}}, {"difficult", b.difficult}});
    return {{"image", a.image_id}, {"width", a.width}, {"height", a.height}, {"boxes", boxes}};
}

ImageAnnotation annotation_from_json(const json& j) {
    ImageAnnotation a;
    a.image_id = j.at("image").get<std::string>();
    a.width = j.at("width").get<int>();
    a.height = j.at("height").get<int>();
    for (const auto& b : j.at("boxes")) {
        GroundTruthBox box;
        box.class_name = b.at("class").get<std::string>();
        auto c = b.at("bbox").get<std::vector<int>>();
        if (c.size() != 4) throw SchemaError("bbox");
        box.xmin = c[0];
        box.ymin = c[1];
        box.xmax = c[2];
        box.ymax = c[3];
        box.difficult = b.value("difficult", false);
        a.boxes.push_back(std::move(box));
    }
    return a;
}

}  // namespace

json state_to_json(const ExperimentState& state) {
    json labeled = json::array();
    for (const auto& a : state.labeled) labeled.push_back(annotation_to_json(a));
    json batches = json::array();
    for (const auto& b : state.unlabeled_batches) batches.push_back({{"id", b.batch_id}, {"images", b.image_ids}});
    return {{"labeled", labeled},
            {"unlabeled_batches", batches},
            {"leftover", state.leftover},
            {"counts", state.counts.per_class},
            {"step", state.step},
            {"seed", state.seed},
            {"samples_labeled", state.samples_labeled}};
}

ExperimentState state_from_json(const json& j) {
    ExperimentState state;
    for (const auto& a : j.at("labeled")) state.labeled.push_back(annotation_from_json(a));
    for (const auto& b : j.at("unlabeled_batches"))
        state.unlabeled_batches.push_back({b.at("id").get<int>(), b.at("images").get<std::vector<std::string>>()});
    state.leftover = j.at("leftover").get<std::vector<std::string>>();
    for (const auto& [name, n] : j.at("counts").items()) state.counts.add(name, n.get<std::int64_t>());
    state.step = j.at("step").get<int>();
    state.seed = j.at("seed").get<std::uint64_t>();
    state.samples_labeled = j.at("samples_labeled").get<long>();

    ClassCounts recount;
    for (const auto& a : state.labeled)
        for (const auto& box : a.boxes) recount.add(box.class_name);
    if (recount.total != state.counts.total) throw SnapshotError("class counts disagree with the labeled pool");
    return state;
}

json record_to_json(const SelectionRecord& r) {
    return {{"step", r.step},
            {"batch", r.batch_id},
            {"value", r.batch_value},
            {"scores", r.per_image_scores},
            {"method", r.method.name()}};
}

SelectionRecord record_from_json(const json& j) {
    SelectionRecord r;
    r.step = j.at("step").get<int>();
    r.batch_id = j.at("batch").get<int>();
    r.batch_value = j.at("value").get<double>();
    r.per_image_scores = j.at("scores").get<std::map<std::string, double>>();
    r.method = SelectionMethod::parse(j.at("method").get<std::string>());
    return r;
}

}  // namespace alod
