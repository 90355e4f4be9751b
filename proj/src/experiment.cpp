#include "alod/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "alod/errors.hpp"
#include "alod/random.hpp"

namespace alod {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
    if (train_annotations.empty()) throw ConfigError("train_annotations is required");
    if (val_annotations.empty()) throw ConfigError("val_annotations is required");
    if (new_classes.empty()) throw ConfigError("new_classes must not be empty");
    if (std::set<std::string>(new_classes.begin(), new_classes.end()).size() != new_classes.size())
        throw ConfigError("new_classes has duplicates");
    if (methods.empty()) throw ConfigError("at least one method is required");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (max_batches && *max_batches < 1) throw ConfigError("max_batches must be at least 1");
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
    if (detector == DetectorKind::replay && !dump) throw ConfigError("replay detector needs a dump path");
    if (!(iou_threshold > 0 && iou_threshold <= 1)) throw ConfigError("iou_threshold must lie in (0, 1]");
    mix.validate();
    synthetic.validate();
}

ExplorationOptions ExperimentConfig::exploration_options() const {
    ExplorationOptions options;
    options.eval_every = eval_every;
    options.max_batches = max_batches;
    options.scoring.include_unknown = include_unknown;
    return options;
}

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    try {
        std::string s;
        s.clear();
        read_opt(j, "train_annotations", s);
        c.train_annotations = resolve(base_dir, s);
        s.clear();
        read_opt(j, "val_annotations", s);
        c.val_annotations = resolve(base_dir, s);
        if (j.contains("dump") && !j["dump"].is_null()) c.dump = resolve(base_dir, j["dump"].get<std::string>());
        read_opt(j, "checkpoints", c.checkpoints);
        std::string detector = c.dump ? "replay" : "synthetic";
        read_opt(j, "detector", detector);
        if (detector == "synthetic")
            c.detector = DetectorKind::synthetic;
        else if (detector == "replay")
            c.detector = DetectorKind::replay;
        else
            throw ConfigError("unknown detector '" + detector + "'");
        read_opt(j, "new_classes", c.new_classes);
        std::vector<std::string> methods;
        if (j.contains("method") && j["method"].is_string()) methods.push_back(j["method"].get<std::string>());
        read_opt(j, "methods", methods);
        if (!methods.empty()) {
            c.methods.clear();
            for (const auto& m : methods) c.methods.push_back(SelectionMethod::parse(m));
        }
        read_opt(j, "batch_size", c.batch_size);
        read_opt(j, "eval_every", c.eval_every);
        if (j.contains("max_batches") && !j["max_batches"].is_null()) c.max_batches = j["max_batches"].get<int>();
        if (j.contains("seed")) c.seeds = {j["seed"].get<std::uint64_t>()};
        read_opt(j, "seeds", c.seeds);
        if (auto it = j.find("mix"); it != j.end()) {
            read_opt(*it, "lambda", c.mix.lambda);
            read_opt(*it, "iterations", c.mix.iterations);
            read_opt(*it, "minibatch_size", c.mix.minibatch_size);
        }
        if (auto it = j.find("synthetic"); it != j.end()) {
            auto& p = c.synthetic;
            read_opt(*it, "p0", p.p0);
            read_opt(*it, "p_max", p.p_max);
            read_opt(*it, "tau", p.tau);
            read_opt(*it, "miss0", p.miss0);
            read_opt(*it, "miss_min", p.miss_min);
            read_opt(*it, "distractor_rate", p.distractor_rate);
            read_opt(*it, "loc_noise", p.loc_noise);
            read_opt(*it, "classification_threshold", p.classification_threshold);
            read_opt(*it, "confusions", p.confusions);
        }
        read_opt(j, "include_unknown", c.include_unknown);
        read_opt(j, "iou_threshold", c.iou_threshold);
        s = c.output_dir.string();
        read_opt(j, "output_dir", s);
        c.output_dir = resolve(base_dir, s);
        if (j.contains("image_dir") && !j["image_dir"].is_null())
            c.image_dir = resolve(base_dir, j["image_dir"].get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    std::vector<std::string> methods;
    for (const auto& m : c.methods) methods.push_back(m.name());
    const auto& p = c.synthetic;
    json j{{"train_annotations", c.train_annotations.string()},
           {"val_annotations", c.val_annotations.string()},
           {"dump", c.dump ? json(c.dump->string()) : json(nullptr)},
           {"checkpoints", c.checkpoints},
           {"detector", c.detector == DetectorKind::synthetic ? "synthetic" : "replay"},
           {"new_classes", c.new_classes},
           {"methods", methods},
           {"batch_size", c.batch_size},
           {"eval_every", c.eval_every},
           {"max_batches", c.max_batches ? json(*c.max_batches) : json(nullptr)},
           {"seeds", c.seeds},
           {"mix", {{"lambda", c.mix.lambda}, {"iterations", c.mix.iterations}, {"minibatch_size", c.mix.minibatch_size}}},
           {"synthetic",
            {{"p0", p.p0},
             {"p_max", p.p_max},
             {"tau", p.tau},
             {"miss0", p.miss0},
             {"miss_min", p.miss_min},
             {"distractor_rate", p.distractor_rate},
             {"loc_noise", p.loc_noise},
             {"classification_threshold", p.classification_threshold},
             {"confusions", p.confusions}}},
           {"include_unknown", c.include_unknown},
           {"iou_threshold", c.iou_threshold},
           {"output_dir", c.output_dir.string()},
           {"image_dir", c.image_dir ? json(c.image_dir->string()) : json(nullptr)}};
    return j;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path());
}

std::uint64_t config_hash(const ExperimentConfig& config) {
    json j = config_to_json(config);
    j.erase("output_dir");
    j.erase("image_dir");
    return fnv1a(j.dump());
}

// Data

ExperimentData ExperimentData::load(const ExperimentConfig& config) {
    config.validate();
    ExperimentData data;
    data.train = load_voc_directory(config.train_annotations);
    data.val = load_voc_directory(config.val_annotations);
    std::set<std::string> fresh(config.new_classes.begin(), config.new_classes.end());
    for (const auto& c : config.new_classes)
        if (!data.train.has_class(c)) throw ConfigError("new class '" + c + "' does not occur in the training data");
    data.train_split = split_by_classes(data.train, fresh);
    DatasetIndex val = data.val;
    for (const auto& c : config.new_classes)
        if (!val.has_class(c)) val.class_list.push_back(c);
    data.val_split = split_by_classes(val, fresh);

    data.all_classes = data.train.class_list;
    for (const auto& c : data.val.class_list)
        if (std::find(data.all_classes.begin(), data.all_classes.end(), c) == data.all_classes.end())
            data.all_classes.push_back(c);

    if (config.detector == DetectorKind::replay) {
        std::ifstream in(*config.dump);
        if (!in) throw ConfigError("cannot open dump " + config.dump->string());
        data.dump = load_detection_dump(in);
    }
    return data;
}

ExperimentState ExperimentData::initial_state(const ExperimentConfig& config, std::uint64_t seed) const {
    std::vector<ImageAnnotation> known;
    for (const auto& [_, a] : train_split.part_a.images) known.push_back(a);
    return ExperimentState::initial(std::move(known), train_split.part_b.image_ids(), config.batch_size, seed);
}

std::unique_ptr<DetectorAdapter> ExperimentData::make_detector(const ExperimentConfig& config,
                                                               std::uint64_t seed) const {
    if (config.detector == DetectorKind::replay) return std::make_unique<ReplayDetector>(*dump, config.checkpoints);

    DatasetIndex world = train;
    for (const auto& [id, a] : val.images) world.images.insert_or_assign(id, a);
    SkillState skill;
    skill.params = config.synthetic;
    // The initial model has been trained on the known classes.
    for (const auto& [_, a] : train_split.part_a.images)
        for (const auto& box : a.boxes) skill.per_class_seen[box.class_name] += 1.0;
    return std::make_unique<SyntheticDetector>(std::move(world), all_classes, std::move(skill), config.mix,
                                               derive_seed(seed, "synthetic-detector"));
}

Evaluator ExperimentData::evaluator(const ExperimentConfig& config) const {
    const DatasetIndex* truth = &val_split.part_b;
    auto classes = config.new_classes;
    double threshold = config.iou_threshold;
    return [truth, classes, threshold](const DetectorAdapter& detector) {
        std::map<std::string, std::vector<Detection>> dets;
        for (const auto& [id, _] : truth->images) dets[id] = detector.detect(id);
        return evaluate_detections(*truth, dets, detector.class_list(), classes, threshold);
    };
}

// Artifacts

fs::path run_directory(const ExperimentConfig& config, const SelectionMethod& method, std::uint64_t seed) {
    return config.output_dir / method.name() / ("seed_" + std::to_string(seed));
}

namespace {

json curve_to_json(const LearningCurve& curve) {
    json out = json::array();
    for (const auto& cp : curve.checkpoints) {
        json ap = json::object();
        for (const auto& [c, v] : cp.per_class_ap) ap[c] = v ? json(*v) : json(nullptr);
        out.push_back({{"samples", cp.samples_labeled}, {"ap", ap}, {"map", cp.map}});
    }
    return out;
}

LearningCurve curve_from_json(const json& j) {
    LearningCurve curve;
    for (const auto& cp : j) {
        CurveCheckpoint c;
        c.samples_labeled = cp.at("samples").get<long>();
        c.map = cp.at("map").get<double>();
        for (const auto& [name, v] : cp.at("ap").items())
            c.per_class_ap[name] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        curve.append(std::move(c));
    }
    return curve;
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << content;
    }
    fs::rename(tmp, path);
}

void write_run_artifacts(const ExperimentConfig& config, const SelectionMethod& method, std::uint64_t seed,
                         const ExplorationResult& result, const DetectorAdapter& detector, bool finished) {
    auto dir = run_directory(config, method, seed);

    std::ostringstream curve;
    write_curve_csv(result.curve, config.new_classes, curve);
    write_file(dir / "curve.csv", curve.str());

    std::ostringstream log;
    for (const auto& r : result.records) log << record_to_json(r).dump() << '\n';
    write_file(dir / "selections.jsonl", log.str());

    json snapshot{{"config_hash", config_hash(config)},
                  {"method", method.name()},
                  {"seed", seed},
                  {"finished", finished},
                  {"state", state_to_json(result.state)},
                  {"detector", detector.save_state()},
                  {"records", json::array()},
                  {"curve", curve_to_json(result.curve)}};
    for (const auto& r : result.records) snapshot["records"].push_back(record_to_json(r));
    write_file(dir / "snapshot.json", snapshot.dump());
}

ExplorationResult execute(const ExperimentConfig& config, const ExperimentData& data, const SelectionMethod& method,
                          std::uint64_t seed, std::optional<ExplorationResult> progress,
                          std::unique_ptr<DetectorAdapter> detector, std::optional<int> stop_after) {
    DatasetOracle oracle(data.train);
    auto evaluate = data.evaluator(config);
    auto options = config.exploration_options();
    auto on_step = [&](const ExplorationResult& r) {
        write_run_artifacts(config, method, seed, r, *detector, exploration_finished(r.state, options));
    };
    if (!progress) progress = ExplorationResult{data.initial_state(config, seed), {}, {}};
    auto result = continue_exploration(std::move(*progress), *detector, oracle, method, evaluate, options, on_step,
                                       stop_after);
    write_run_artifacts(config, method, seed, result, *detector, exploration_finished(result.state, options));
    return result;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

RunSummary summarize(const ExperimentConfig& config) {
    RunSummary summary;
    for (const auto& method : config.methods) {
        MethodSummary ms;
        ms.method = method;
        for (auto seed : config.seeds) {
            std::ifstream in(run_directory(config, method, seed) / "curve.csv");
            if (!in) throw InvariantError("missing curve for " + method.name() + " seed " + std::to_string(seed));
            auto curve = read_curve_csv(in);
            if (ms.samples.empty()) ms.samples = curve.samples;
            if (curve.samples != ms.samples) throw InvariantError("runs checkpoint at different sample counts");
            ms.seeds.push_back(seed);
            ms.map.push_back(curve.map);
            ms.aulc.push_back(curve.aulc);
        }
        for (std::size_t i = 0; i < ms.samples.size(); ++i) {
            std::vector<double> m, a;
            for (std::size_t s = 0; s < ms.seeds.size(); ++s) {
                m.push_back(ms.map[s][i]);
                a.push_back(ms.aulc[s][i]);
            }
            ms.map_mean.push_back(mean_of(m));
            ms.map_std.push_back(std_of(m));
            ms.aulc_mean.push_back(mean_of(a));
            ms.aulc_std.push_back(std_of(a));
        }
        summary.methods.push_back(std::move(ms));
    }
    return summary;
}

void write_summary_csv(const RunSummary& summary, std::ostream& out) {
    auto f = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f", v);
        return std::string(buf);
    };
    out << "method,samples,seeds,mAP_mean,mAP_std,AULC_mean,AULC_std\n";
    for (const auto& m : summary.methods)
        for (std::size_t i = 0; i < m.samples.size(); ++i)
            out << m.method.name() << ',' << m.samples[i] << ',' << m.seeds.size() << ',' << f(m.map_mean[i]) << ','
                << f(m.map_std[i]) << ',' << f(m.aulc_mean[i]) << ',' << f(m.aulc_std[i]) << '\n';
}

RunSummary run(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    auto data = ExperimentData::load(config);
    fs::create_directories(config.output_dir);
    write_file(config.output_dir / "config.json", config_to_json(config).dump(2) + "\n");

    bool complete = true;
    for (const auto& method : config.methods)
        for (auto seed : config.seeds) {
            auto result = execute(config, data, method, seed, std::nullopt, data.make_detector(config, seed),
                                  options.stop_after);
            complete = complete && exploration_finished(result.state, config.exploration_options());
        }
    if (!complete) {
        RunSummary partial;
        partial.complete = false;
        return partial;
    }
    auto summary = summarize(config);
    std::ostringstream table;
    write_summary_csv(summary, table);
    write_file(config.output_dir / "summary.csv", table.str());
    return summary;
}

ResumeOutcome resume(const fs::path& snapshot_path, std::optional<fs::path> config_path) {
    json snapshot;
    {
        std::ifstream in(snapshot_path);
        if (!in) throw SnapshotError("cannot open snapshot " + snapshot_path.string());
        try {
            snapshot = json::parse(in);
        } catch (const json::parse_error& e) {
            throw SnapshotError(std::string("corrupt snapshot: ") + e.what());
        }
    }
    if (!config_path) config_path = snapshot_path.parent_path().parent_path().parent_path() / "config.json";
    ExperimentConfig config;
    {
        std::ifstream in(*config_path);
        if (!in) throw SnapshotError("cannot open run config " + config_path->string());
        // The echoed config already carries resolved paths.
        try {
            config = config_from_json(json::parse(in), {});
        } catch (const json::parse_error& e) {
            throw SnapshotError(std::string("corrupt run config: ") + e.what());
        }
    }

    ResumeOutcome outcome;
    SelectionMethod method;
    std::uint64_t seed = 0;
    try {
        if (snapshot.at("config_hash").get<std::uint64_t>() != config_hash(config))
            throw SnapshotError("snapshot was written under a different config");
        method = SelectionMethod::parse(snapshot.at("method").get<std::string>());
        seed = snapshot.at("seed").get<std::uint64_t>();
        outcome.result.state = state_from_json(snapshot.at("state"));
        for (const auto& r : snapshot.at("records")) outcome.result.records.push_back(record_from_json(r));
        outcome.result.curve = curve_from_json(snapshot.at("curve"));
    } catch (const json::exception& e) {
        throw SnapshotError(std::string("corrupt snapshot: ") + e.what());
    } catch (const ConfigError& e) {
        throw SnapshotError(std::string("corrupt snapshot: ") + e.what());
    }

    if (snapshot.value("finished", false)) {
        outcome.already_finished = true;
        return outcome;
    }

    auto data = ExperimentData::load(config);
    auto detector = data.make_detector(config, seed);
    detector->load_state(snapshot.at("detector"));
    outcome.result =
        execute(config, data, method, seed, std::move(outcome.result), std::move(detector), std::nullopt);

    try {
        auto summary = summarize(config);
        bool all_done = true;
        for (const auto& m : config.methods)
            for (auto s : config.seeds) {
                std::ifstream in(run_directory(config, m, s) / "snapshot.json");
                all_done = all_done && json::parse(in).value("finished", false);
            }
        if (all_done) {
            std::ostringstream table;
            write_summary_csv(summary, table);
            write_file(config.output_dir / "summary.csv", table.str());
        }
    } catch (const Error&) {
        // Other runs of this config have not been produced yet.
    }
    return outcome;
}

}  // namespace alod
