#include <fstream>
#include <iostream>
#include <set>

#include "alod/annotation.hpp"
#include "alod/dump.hpp"
#include "alod/errors.hpp"
#include "alod/evaluation.hpp"
#include "alod/experiment.hpp"
#include "alod/fixture.hpp"
#include "alod/selection.hpp"
#include "alod/service.hpp"

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct RunFlags {
    std::string config;
    std::string train, val, dump, output;
    std::vector<std::string> new_classes, methods, checkpoints;
    std::vector<std::uint64_t> seeds;
    std::optional<int> batch_size, eval_every, max_batches, iterations, minibatch_size, stop_after;
    std::optional<double> lambda;
    bool exclude_unknown = false;
};

alod::ExperimentConfig build_config(const RunFlags& f) {
    nlohmann::json j = nlohmann::json::object();
    std::filesystem::path base;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw alod::ConfigError("cannot open config " + f.config);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw alod::ConfigError(f.config + ": " + e.what());
        }
        base = std::filesystem::path(f.config).parent_path();
    }
    auto cfg = alod::config_from_json(j, base);
    if (!f.train.empty()) cfg.train_annotations = f.train;
    if (!f.val.empty()) cfg.val_annotations = f.val;
    if (!f.dump.empty()) {
        cfg.dump = f.dump;
        cfg.detector = alod::DetectorKind::replay;
    }
    if (!f.output.empty()) cfg.output_dir = f.output;
    if (!f.new_classes.empty()) cfg.new_classes = f.new_classes;
    if (!f.methods.empty()) {
        cfg.methods.clear();
        for (const auto& m : f.methods) cfg.methods.push_back(alod::SelectionMethod::parse(m));
    }
    if (!f.checkpoints.empty()) cfg.checkpoints = f.checkpoints;
    if (!f.seeds.empty()) cfg.seeds = f.seeds;
    if (f.batch_size) cfg.batch_size = *f.batch_size;
    if (f.eval_every) cfg.eval_every = *f.eval_every;
    if (f.max_batches) cfg.max_batches = *f.max_batches;
    if (f.iterations) cfg.mix.iterations = *f.iterations;
    if (f.minibatch_size) cfg.mix.minibatch_size = *f.minibatch_size;
    if (f.lambda) cfg.mix.lambda = *f.lambda;
    if (f.exclude_unknown) cfg.include_unknown = false;
    cfg.validate();
    return cfg;
}

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("-c,--config", f.config, "Experiment config (JSON)");
    cmd->add_option("--train", f.train, "Training annotation directory");
    cmd->add_option("--val", f.val, "Validation annotation directory");
    cmd->add_option("--dump", f.dump, "Detection dump for the replay detector");
    cmd->add_option("--checkpoint", f.checkpoints, "Replay checkpoint sequence (repeatable)");
    cmd->add_option("-o,--output", f.output, "Output directory");
    cmd->add_option("--new-class", f.new_classes, "New class (repeatable)");
    cmd->add_option("-m,--method", f.methods, "random, sum, avg, max, optionally with +w (repeatable)");
    cmd->add_option("-s,--seed", f.seeds, "Run seed (repeatable)");
    cmd->add_option("--batch-size", f.batch_size);
    cmd->add_option("--eval-every", f.eval_every, "Validate every N batches");
    cmd->add_option("--max-batches", f.max_batches, "Labeling budget in batches");
    cmd->add_option("--lambda", f.lambda, "Old-pool probability in update minibatches");
    cmd->add_option("--iterations", f.iterations, "Minibatches per update");
    cmd->add_option("--minibatch-size", f.minibatch_size);
    cmd->add_flag("--exclude-unknown", f.exclude_unknown, "Skip unknown-flagged detections when scoring");
}

int cmd_run(const RunFlags& flags) {
    auto config = build_config(flags);
    alod::RunOptions options;
    options.stop_after = flags.stop_after;
    auto summary = alod::run(config, options);
    if (!summary.complete) {
        std::cout << "interrupted; resume from the snapshot.json files under " << config.output_dir << '\n';
        return 0;
    }
    alod::write_summary_csv(summary, std::cout);
    return 0;
}

int cmd_resume(const std::string& snapshot, const std::string& config) {
    auto outcome = alod::resume(snapshot, config.empty() ? std::nullopt
                                                         : std::optional<std::filesystem::path>(config));
    if (outcome.already_finished) {
        std::cout << "run already finished; nothing to do\n";
        return 0;
    }
    std::cout << "resumed to step " << outcome.result.state.step << ", " << outcome.result.curve.checkpoints.size()
              << " checkpoints\n";
    return 0;
}

int cmd_eval(const std::string& dump_path, const std::string& annotations, std::vector<std::string> classes,
             std::vector<std::string> checkpoints, double iou_threshold) {
    std::ifstream in(dump_path);
    if (!in) throw alod::ConfigError("cannot open dump " + dump_path);
    auto dump = alod::load_detection_dump(in);
    auto truth = alod::load_voc_directory(annotations);
    if (classes.empty()) classes = truth.class_list;
    if (checkpoints.empty()) checkpoints = dump.checkpoints;

    std::cout << "checkpoint";
    for (const auto& c : classes) std::cout << ',' << c;
    std::cout << ",mAP\n";
    for (const auto& cp : checkpoints) {
        std::map<std::string, std::vector<alod::Detection>> dets;
        for (const auto& [id, _] : truth.images) {
            auto it = dump.records.find({cp, id});
            dets[id] = it == dump.records.end() ? std::vector<alod::Detection>{} : it->second.detections;
        }
        auto result = alod::evaluate_detections(truth, dets, dump.classes, classes, iou_threshold);
        std::cout << cp;
        char buf[32];
        for (const auto& c : classes) {
            const auto& ap = result.per_class_ap[c];
            if (ap)
                std::snprintf(buf, sizeof buf, "%.4f", *ap);
            else
                std::snprintf(buf, sizeof buf, "nan");
            std::cout << ',' << buf;
        }
        std::snprintf(buf, sizeof buf, "%.4f", result.map);
        std::cout << ',' << buf << '\n';
    }
    return 0;
}

int cmd_partition(const std::string& annotations, const std::vector<std::string>& new_classes, int batch_size,
                  std::uint64_t seed) {
    auto dataset = alod::load_voc_directory(annotations);
    std::vector<std::string> pool = dataset.image_ids();
    if (!new_classes.empty()) {
        for (const auto& c : new_classes)
            if (!dataset.has_class(c)) throw alod::ConfigError("unknown class '" + c + "'");
        pool = alod::split_by_classes(dataset, {new_classes.begin(), new_classes.end()}).part_b.image_ids();
    }
    auto partition = alod::partition_into_batches(pool, batch_size, seed);
    for (const auto& b : partition.batches) {
        std::cout << "batch " << b.batch_id << ':';
        for (const auto& id : b.image_ids) std::cout << ' ' << id;
        std::cout << '\n';
    }
    std::cout << "leftover:";
    for (const auto& id : partition.leftover) std::cout << ' ' << id;
    std::cout << "\n" << partition.batches.size() << " batches, " << partition.leftover.size() << " leftover\n";
    return 0;
}

int cmd_serve(const std::string& host, int port, const std::string& image_dir) {
    alod::CurationService service(image_dir.empty() ? std::nullopt
                                                    : std::optional<std::filesystem::path>(image_dir));
    httplib::Server server;
    service.mount(server);
    std::cout << "listening on " << host << ':' << port << std::endl;
    if (!server.listen(host, port)) throw alod::ConfigError("cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

int cmd_fixture(const std::string& out, std::uint64_t seed) {
    auto spec = alod::rare_class_fixture();
    spec.seed = seed;
    auto fixture = alod::generate_fixture(spec);
    std::filesystem::path root(out);
    alod::write_voc_directory(fixture.train, root / "train");
    alod::write_voc_directory(fixture.val, root / "val");

    alod::ExperimentConfig config;
    config.train_annotations = "train";
    config.val_annotations = "val";
    config.new_classes = {"bird", "sheep", "cow"};
    config.methods = {alod::SelectionMethod::parse("random"), alod::SelectionMethod::parse("sum+w")};
    config.seeds = {1, 2, 3};
    config.max_batches = 25;
    config.synthetic.confusions = alod::rare_class_confusions();
    config.output_dir = "runs";
    std::ofstream(root / "config.json") << alod::config_to_json(config).dump(2) << '\n';
    std::cout << "wrote " << fixture.train.size() << " training and " << fixture.val.size()
              << " validation annotations to " << root << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active learning for object detection: selection, simulation and evaluation"};
    app.require_subcommand(1);

    RunFlags run_flags;
    auto* run = app.add_subcommand("run", "Run seeded exploration experiments");
    add_run_flags(run, run_flags);
    run->add_option("--stop-after", run_flags.stop_after, "Interrupt each run after N steps");

    std::string snapshot, resume_config;
    auto* resume = app.add_subcommand("resume", "Continue a run from its snapshot");
    resume->add_option("snapshot", snapshot, "snapshot.json of the run")->required();
    resume->add_option("-c,--config", resume_config, "Echoed run config (default: <output>/config.json)");

    std::string dump, annotations;
    std::vector<std::string> classes, checkpoints;
    double iou_threshold = alod::kDefaultIouThreshold;
    auto* eval = app.add_subcommand("eval", "Score a detection dump against annotations");
    eval->add_option("--dump", dump)->required();
    eval->add_option("--annotations", annotations)->required();
    eval->add_option("--class", classes, "Classes to evaluate (default: all annotated)");
    eval->add_option("--checkpoint", checkpoints, "Checkpoints to evaluate (default: all)");
    eval->add_option("--iou", iou_threshold);

    std::vector<std::string> part_classes;
    int batch_size = 10;
    std::uint64_t seed = 1;
    auto* partition = app.add_subcommand("partition", "Show the batch assignment for a seed");
    partition->add_option("--annotations", annotations)->required();
    partition->add_option("--new-class", part_classes, "Restrict the pool to new-class images");
    partition->add_option("--batch-size", batch_size);
    partition->add_option("-s,--seed", seed);

    std::string host = "127.0.0.1", image_dir;
    int port = 8080;
    auto* serve = app.add_subcommand("serve", "Serve the curation API for human annotators");
    serve->add_option("--host", host);
    serve->add_option("--port", port);
    serve->add_option("--image-dir", image_dir, "Directory with <image_id>.jpg/.png files");

    std::string fixture_out;
    auto* fixture = app.add_subcommand("fixture", "Write a synthetic rare-class dataset and config");
    fixture->add_option("out", fixture_out)->required();
    fixture->add_option("-s,--seed", seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(run_flags);
        if (*resume) return cmd_resume(snapshot, resume_config);
        if (*eval) return cmd_eval(dump, annotations, classes, checkpoints, iou_threshold);
        if (*partition) return cmd_partition(annotations, part_classes, batch_size, seed);
        if (*serve) return cmd_serve(host, port, image_dir);
        if (*fixture) return cmd_fixture(fixture_out, seed);
    } catch (const alod::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const alod::Error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
