#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "alod/errors.hpp"
#include "alod/experiment.hpp"
#include "alod/fixture.hpp"
#include "alod/log.hpp"

using namespace alod;
namespace fs = std::filesystem;

namespace {

const fs::path kTmp = ALOD_TEST_TMP;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in, "cannot open " << p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Small two-new-class dataset written once per process.
const fs::path& dataset_root() {
    static const fs::path root = [] {
        fs::path r = kTmp / "dataset";
        fs::remove_all(r);
        FixtureSpec spec;
        spec.known_weights = {{"dog", 1.0}, {"horse", 1.0}};
        spec.new_weights = {{"cow", 0.3}, {"sheep", 0.7}};
        spec.train_known_images = 40;
        spec.train_new_images = 64;
        spec.val_new_images = 30;
        spec.seed = 3;
        auto fx = generate_fixture(spec);
        write_voc_directory(fx.train, r / "train");
        write_voc_directory(fx.val, r / "val");
        return r;
    }();
    return root;
}

ExperimentConfig small_config(const std::string& out) {
    ExperimentConfig c;
    c.train_annotations = dataset_root() / "train";
    c.val_annotations = dataset_root() / "val";
    c.new_classes = {"cow", "sheep"};
    c.methods = {SelectionMethod::parse("random"), SelectionMethod::parse("sum+w")};
    c.seeds = {1, 2};
    c.batch_size = 10;
    c.eval_every = 2;
    c.mix.iterations = 20;
    c.synthetic.confusions = {{"cow", {"horse", "dog"}}};
    c.output_dir = kTmp / out;
    fs::remove_all(c.output_dir);
    return c;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
    fs::path log = kTmp / "cli_output.txt";
    std::string cmd = std::string("\"") + ALOD_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    int status = std::system(cmd.c_str());
    if (output) *output = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config json round trip and validation") {
    auto c = small_config("cfg");
    c.max_batches = 4;
    auto back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_hash(back) == config_hash(c));

    auto moved = c;
    moved.output_dir = "/elsewhere";
    CHECK(config_hash(moved) == config_hash(c));
    auto reseeded = c;
    reseeded.seeds = {9};
    CHECK(config_hash(reseeded) != config_hash(c));

    auto j = config_to_json(c);
    j["new_classes"] = nlohmann::json::array();
    CHECK_THROWS_AS(config_from_json(j).validate(), ConfigError);
    j = config_to_json(c);
    j["batch_size"] = "ten";
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
    j = config_to_json(c);
    j["methods"] = {"median"};
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    auto rel = config_from_json({{"train_annotations", "t"}, {"val_annotations", "v"}, {"new_classes", {"cow"}},
                                 {"method", "max"}, {"seed", 4}},
                                "/base");
    CHECK(rel.train_annotations == fs::path("/base/t"));
    CHECK(rel.seeds == std::vector<std::uint64_t>{4});
    CHECK(rel.methods.size() == 1);
    CHECK(rel.methods[0].name() == "max");
}

TEST_CASE("experiment data splits known and new classes") {
    auto c = small_config("splits");
    auto data = ExperimentData::load(c);
    CHECK(data.train_split.part_a.size() == 40);
    CHECK(data.train_split.part_b.size() == 64);
    auto state = data.initial_state(c, 1);
    CHECK(state.unlabeled_batches.size() == 6);
    CHECK(state.leftover.size() == 4);
    CHECK(state.labeled.size() == 40);
    CHECK(state.counts.per_class.count("cow") == 0);

    auto bad = c;
    bad.new_classes = {"unicorn"};
    CHECK_THROWS_AS(ExperimentData::load(bad), ConfigError);
    bad.new_classes.clear();
    CHECK_THROWS_AS(ExperimentData::load(bad), ConfigError);
}

TEST_CASE("runs are byte-identical under the same config") {
    auto a = small_config("det_a");
    auto b = small_config("det_b");
    auto sa = run(a);
    auto sb = run(b);
    CHECK(sa.complete);
    for (const auto& m : a.methods)
        for (auto s : a.seeds) {
            for (const char* f : {"curve.csv", "selections.jsonl"})
                CHECK(slurp(run_directory(a, m, s) / f) == slurp(run_directory(b, m, s) / f));
        }
    CHECK(slurp(a.output_dir / "summary.csv") == slurp(b.output_dir / "summary.csv"));
    CHECK(slurp(run_directory(a, a.methods[0], 1) / "selections.jsonl") !=
          slurp(run_directory(a, a.methods[0], 2) / "selections.jsonl"));
}

TEST_CASE("run artifacts") {
    auto c = small_config("artifacts");
    auto summary = run(c);
    REQUIRE(summary.methods.size() == 2);
    const auto& random = summary.methods[0];
    CHECK(random.samples == std::vector<long>{0, 20, 40, 60});
    CHECK(random.map.size() == 2);

    auto curve_text = slurp(run_directory(c, random.method, 1) / "curve.csv");
    CHECK(curve_text.rfind("samples,cow,sheep,mAP,AULC\n", 0) == 0);
    std::stringstream log(slurp(run_directory(c, random.method, 1) / "selections.jsonl"));
    std::string line;
    int steps = 0;
    while (std::getline(log, line)) {
        auto r = record_from_json(nlohmann::json::parse(line));
        CHECK(r.step == steps++);
        CHECK(r.method.random);
    }
    CHECK(steps == 6);

    // Summary statistics are recomputed from the emitted curves.
    auto again = summarize(c);
    std::stringstream x, y;
    write_summary_csv(summary, x);
    write_summary_csv(again, y);
    CHECK(x.str() == y.str());
    CHECK(x.str() == slurp(c.output_dir / "summary.csv"));
    double m0 = random.map[0].back(), m1 = random.map[1].back();
    CHECK(random.map_mean.back() == doctest::Approx((m0 + m1) / 2));
    CHECK(random.map_std.back() == doctest::Approx(std::abs(m0 - m1) / std::sqrt(2.0)));
}

TEST_CASE("resume reproduces an uninterrupted run") {
    auto whole = small_config("whole");
    run(whole);

    auto part = small_config("part");
    RunOptions stop;
    stop.stop_after = 3;
    CHECK(!run(part, stop).complete);
    CHECK(!fs::exists(part.output_dir / "summary.csv"));

    for (const auto& m : part.methods)
        for (auto s : part.seeds) {
            auto outcome = resume(run_directory(part, m, s) / "snapshot.json");
            CHECK(!outcome.already_finished);
            CHECK(outcome.result.state.step == 6);
        }
    for (const auto& m : part.methods)
        for (auto s : part.seeds)
            for (const char* f : {"curve.csv", "selections.jsonl", "snapshot.json"})
                CHECK(slurp(run_directory(part, m, s) / f) == slurp(run_directory(whole, m, s) / f));
    CHECK(slurp(part.output_dir / "summary.csv") == slurp(whole.output_dir / "summary.csv"));

    auto again = resume(run_directory(part, part.methods[0], 1) / "snapshot.json");
    CHECK(again.already_finished);
}

TEST_CASE("resume rejects a snapshot from another config") {
    auto c = small_config("mismatch");
    RunOptions stop;
    stop.stop_after = 1;
    run(c, stop);
    auto other = c;
    other.batch_size = 5;
    fs::path cfg = kTmp / "other_config.json";
    std::ofstream(cfg) << config_to_json(other).dump();
    CHECK_THROWS_AS(resume(run_directory(c, c.methods[0], 1) / "snapshot.json", cfg), SnapshotError);

    fs::path broken = kTmp / "broken_snapshot.json";
    std::ofstream(broken) << "{\"state\": ";
    CHECK_THROWS_AS(resume(broken, cfg), SnapshotError);
}

TEST_CASE("replay detector runs from a dump") {
    auto c = small_config("replay");
    auto data = ExperimentData::load(c);
    DetectionDump dump;
    dump.classes = data.all_classes;
    dump.checkpoints = {"c0", "c1"};
    const auto k = static_cast<Eigen::Index>(dump.classes.size());
    int n = 0;
    for (const auto& cp : dump.checkpoints)
        for (const auto* index : {&data.train, &data.val})
            for (const auto& [id, a] : index->images) {
                Eigen::VectorXd v = Eigen::VectorXd::Constant(k, 1.0);
                v[(n++) % k] = 3.0;
                Detection det{{0.5, 0.5, 0.3, 0.3}, cp == "c0" ? 0.4 : 0.8, Distribution(v / v.sum()), false};
                dump.records[{cp, id}] = {cp, id, {det}};
            }
    fs::create_directories(c.output_dir);
    fs::path path = c.output_dir / "dump.jsonl";
    {
        std::ofstream out(path);
        write_detection_dump(dump, out);
    }
    c.detector = DetectorKind::replay;
    c.dump = path;
    c.seeds = {1};
    auto quiet = set_warning_sink([](const std::string&) {});
    auto summary = run(c);
    set_warning_sink(quiet);
    CHECK(summary.complete);
    CHECK(summary.methods[1].samples.back() == 60);
}

TEST_CASE("cli exit codes") {
    std::string out;
    CHECK(run_cli("--help", &out) == 0);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("run") == 2);

    auto c = small_config("cli");
    c.seeds = {1};
    c.methods = {SelectionMethod::parse("max")};
    fs::create_directories(c.output_dir);
    fs::path cfg = c.output_dir / "input.json";
    std::ofstream(cfg) << config_to_json(c).dump(2);
    CHECK(run_cli("run -c \"" + cfg.string() + "\"", &out) == 0);
    CHECK(out.rfind("method,samples,seeds,mAP_mean,mAP_std,AULC_mean,AULC_std\n", 0) == 0);

    CHECK(run_cli("resume \"" + run_directory(c, c.methods[0], 1).string() + "/snapshot.json\"", &out) == 0);
    CHECK(out.find("nothing to do") != std::string::npos);

    CHECK(run_cli("run -c \"" + cfg.string() + "\" --new-class unicorn") == 2);
    CHECK(run_cli("run -c \"" + (kTmp / "nope.json").string() + "\"") == 2);

    fs::path bad_train = kTmp / "bad_train";
    fs::create_directories(bad_train);
    std::ofstream(bad_train / "x.xml") << "<annotation><size><width>10</width>";
    CHECK(run_cli("run -c \"" + cfg.string() + "\" --train \"" + bad_train.string() + "\"", &out) == 3);
    CHECK(out.find("data error") != std::string::npos);

    CHECK(run_cli("partition --annotations \"" + (dataset_root() / "train").string() +
                      "\" --new-class cow --new-class sheep",
                  &out) == 0);
    CHECK(out.find("6 batches, 4 leftover") != std::string::npos);
}
