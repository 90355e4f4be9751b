// Acceptance gate. `acceptance <criterion>` checks one criterion and prints a
// single PASS/FAIL line; with no argument every criterion runs in turn.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "alod/detector.hpp"
#include "alod/evaluation.hpp"
#include "alod/experiment.hpp"
#include "alod/fixture.hpp"
#include "alod/scoring.hpp"
#include "alod/selection.hpp"
#include "bridge.hpp"
#include "generators.hpp"

using namespace alod;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string id;
    std::string title;
    double time_limit_s;
    std::function<Verdict()> check;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// Printed mAP / AULC per method at 50, 100, 150, 200, 250 samples and after
// the whole pool.
struct TableRow {
    const char* method;
    double map[6];
    double aulc[6];
};

const TableRow kTable[] = {
    {"Random", {8.7, 12.4, 15.5, 18.7, 21.9, 32.4}, {4.3, 14.9, 28.8, 45.9, 66.2, 264.0}},
    {"Max", {9.2, 12.9, 15.7, 19.8, 22.6, 32.0}, {4.6, 15.7, 30.0, 47.8, 69.0, 269.3}},
    {"Avg", {9.0, 12.4, 15.8, 19.3, 22.7, 33.3}, {4.5, 15.2, 29.2, 46.8, 67.8, 266.4}},
    {"Sum", {8.5, 14.3, 17.3, 19.8, 22.7, 32.4}, {4.2, 15.6, 31.4, 49.9, 71.2, 268.2}},
    {"Max+w", {9.2, 13.0, 17.0, 20.6, 23.2, 33.0}, {4.6, 15.7, 30.7, 49.5, 71.4, 271.0}},
    {"Avg+w", {8.7, 12.5, 16.6, 19.9, 22.4, 32.7}, {4.3, 14.9, 29.4, 47.7, 68.8, 267.1}},
    {"Sum+w", {8.7, 13.7, 17.5, 20.9, 24.3, 32.7}, {4.4, 15.6, 31.2, 50.4, 72.9, 273.6}},
};

// Printed values carry one decimal; allow for the binary representation.
constexpr double kTableTolerance = 0.1 + 1e-9;

std::vector<double> row_aulc(const TableRow& row) {
    std::vector<double> seq{0.0};
    seq.insert(seq.end(), std::begin(row.map), std::end(row.map));
    return aulc(seq);
}

Verdict table_columns() {
    int ok = 0, total = 0;
    double worst = 0;
    for (const auto& row : kTable) {
        auto a = row_aulc(row);
        for (int col = 0; col < 5; ++col) {
            double dev = std::abs(a[static_cast<std::size_t>(col) + 1] - row.aulc[col]);
            worst = std::max(worst, dev);
            ++total;
            ok += dev <= kTableTolerance;
        }
    }
    return {ok == total, fmt("%.0f/%.0f cells at 50-250 samples within 0.1 (max deviation %.3f)", ok, total, worst)};
}

Verdict table_all_column() {
    int ok = 0;
    double worst = 0;
    std::string example;
    for (const auto& row : kTable) {
        double computed = row_aulc(row).back();
        double dev = std::abs(computed - row.aulc[5]);
        worst = std::max(worst, dev);
        ok += dev <= kTableTolerance;
        if (example.empty()) example = std::string(row.method) + fmt(" %.1f vs printed %.1f", computed, row.aulc[5]);
    }
    return {ok == 7, fmt("%.0f/7 'all samples' cells within 0.1 (max deviation %.1f); ", ok, worst) + "e.g. " + example +
                         "; the printed values integrate checkpoints not shown in the table"};
}

Verdict partition_counts() {
    auto ids = [](int n) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back("img" + std::to_string(i));
        return v;
    };
    auto a = partition_into_batches(ids(605), 10, 1);
    auto b = partition_into_batches(ids(638), 10, 1);
    bool pass = a.batches.size() == 60 && a.leftover.size() == 5 && b.batches.size() == 63 && b.leftover.size() == 8;
    return {pass, fmt("605 -> %.0f + %.0f, 638 -> %.0f + %.0f", static_cast<double>(a.batches.size()),
                      static_cast<double>(a.leftover.size()), static_cast<double>(b.batches.size()),
                      static_cast<double>(b.leftover.size()))};
}

Verdict metric_properties() {
    std::mt19937_64 rng(2024);
    int cases = 0, failures = 0;
    auto expect = [&](bool ok) {
        ++cases;
        failures += !ok;
    };

    expect(margin_1vs2(Distribution{0.5, 0.5}) == 1.0);
    expect(margin_1vs2(Distribution{1.0, 0.0, 0.0}) == 0.0);
    expect(margin_1vs2(Distribution{0.0, 0.0, 1.0}) == 0.0);
    expect(margin_1vs2(Distribution{0.2, 0.4, 0.4}) == 1.0);

    for (int i = 0; i < 1000; ++i) {
        int k = 2 + static_cast<int>(rng() % 10);
        auto d = testing::random_distribution(rng, k);
        double m = margin_1vs2(d);
        Eigen::VectorXd s = d.scores();
        std::sort(s.data(), s.data() + s.size(), std::greater<>());
        expect(m >= 0.0 && m <= 1.0);
        expect((m == 1.0) == (s[0] == s[1]));
        expect((m == 0.0) == (s[0] == 1.0));
    }

    for (auto kind : {Aggregation::Sum, Aggregation::Avg, Aggregation::Max})
        expect(aggregate_image(std::vector<double>{}, kind) == 0.0);

    for (int i = 0; i < 1000; ++i) {
        auto values = testing::random_values(rng, 15);
        auto shuffled = values;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        double sum = aggregate_image(values, Aggregation::Sum);
        double avg = aggregate_image(values, Aggregation::Avg);
        double max = aggregate_image(values, Aggregation::Max);
        expect(std::abs(aggregate_image(shuffled, Aggregation::Sum) - sum) <= 1e-12 * std::max(1.0, sum));
        expect(std::abs(aggregate_image(shuffled, Aggregation::Avg) - avg) <= 1e-12 * std::max(1.0, avg));
        expect(aggregate_image(shuffled, Aggregation::Max) == max);
        if (values.empty()) {
            expect(sum == 0.0 && avg == 0.0 && max == 0.0);
        } else {
            const double slack = 1e-12 * std::max(1.0, sum);
            expect(avg <= max + slack && max <= sum + slack);
        }
        std::vector<double> single{values.empty() ? 0.3 : values.front()};
        expect(aggregate_image(single, Aggregation::Sum) == single[0] &&
               aggregate_image(single, Aggregation::Avg) == single[0] &&
               aggregate_image(single, Aggregation::Max) == single[0]);
    }
    return {failures == 0, fmt("%.0f randomized and boundary cases, %.0f failures", cases, failures)};
}

Verdict weighting() {
    int failures = 0;
    ClassCounts counts;
    counts.per_class = {{"cow", 4}, {"rest", 96}};
    counts.total = 100;
    counts.num_classes = 20;
    failures += class_weight(counts, "cow") != 24.0;
    counts.per_class = {{"cow", 99}, {"rest", 1}};
    failures += class_weight(counts, "cow") != 1.2;

    double previous = INFINITY;
    for (std::int64_t n = 0; n <= 1000; ++n) {
        counts.per_class["cow"] = n;
        counts.total = 1000;
        double w = class_weight(counts, "cow");
        failures += !(w < previous);
        previous = w;
    }

    std::vector<std::string> classes;
    for (int i = 0; i < 20; ++i) classes.push_back("c" + std::to_string(i));
    auto empty = ClassCounts::over(classes);
    for (const auto& c : classes) failures += class_weight(empty, c) != 20.0;
    return {failures == 0, fmt("hand values 24.0 / 1.2, 1001-step monotone sweep, uniform prior K=20; %.0f failures",
                               failures)};
}

Verdict ap_oracle() {
    std::mt19937_64 rng(515);
    int instances = 0;
    double worst = 0;
    while (instances < 200) {
        auto inst = testing::random_ap_instance(rng);
        std::size_t num_gt = testing::oracle_num_gt(inst.gts);
        if (num_gt == 0) continue;
        auto match = match_detections(testing::to_ranked(inst.dets), testing::to_refs(inst.gts));
        double expected = testing::oracle_ap(testing::oracle_flags(inst.dets, inst.gts, 0.5), num_gt);
        auto ap = average_precision(match);
        worst = std::max(worst, ap ? std::abs(*ap - expected) : INFINITY);
        ++instances;
    }
    return {worst <= 1e-9, fmt("200 random instances, max |AP - oracle| = %.2e", worst)};
}

Verdict lambda_mixing() {
    auto fraction = [](double lambda, std::uint64_t seed) {
        MixSchedule s{lambda, 100, 100};
        double old = 0;
        for (const auto& b : mixed_minibatch(500, 10, s, seed))
            for (const auto& d : b) old += d.from_old;
        return old / 10000.0;
    };
    double half = fraction(0.5, 17);
    double none = fraction(0.0, 17);
    double all = fraction(1.0, 17);
    bool pass = half >= 0.48 && half <= 0.52 && none == 0.0 && all == 1.0;
    return {pass, fmt("old fraction %.4f at lambda 0.5 over 10000 slots; %.1f at 0; %.1f at 1", half, none, all)};
}

const fs::path kTmp = ALOD_TEST_TMP;

struct SeedOutcome {
    double final_aulc = 0;
    double rare_ap = 0;
};

Verdict simulation_ordering() {
    const std::string rare = "cow";
    auto spec = rare_class_fixture();
    auto fixture = generate_fixture(spec);
    fs::path root = kTmp / "simulation";
    fs::remove_all(root);
    write_voc_directory(fixture.train, root / "train");
    write_voc_directory(fixture.val, root / "val");

    ExperimentConfig config;
    config.train_annotations = root / "train";
    config.val_annotations = root / "val";
    config.new_classes = {"bird", "sheep", "cow"};
    config.max_batches = 25;
    config.synthetic.confusions = rare_class_confusions();
    auto data = ExperimentData::load(config);
    auto evaluate = data.evaluator(config);

    long rare_boxes = 0, new_boxes = 0;
    for (const auto& [_, a] : fixture.train.images)
        for (const auto& b : a.boxes) {
            rare_boxes += b.class_name == rare;
            new_boxes += b.class_name != "aeroplane" && b.class_name != "dog" && b.class_name != "horse" &&
                         b.class_name != "cat" && b.class_name != "car" && b.class_name != "person";
        }

    auto simulate = [&](const std::string& method, std::uint64_t seed) {
        auto detector = data.make_detector(config, seed);
        DatasetOracle oracle(data.train);
        auto result = run_exploration(data.initial_state(config, seed), *detector, oracle,
                                      SelectionMethod::parse(method), evaluate, config.exploration_options());
        const auto& last = result.curve.checkpoints.back();
        auto it = last.per_class_ap.find(rare);
        return SeedOutcome{aulc(result.curve).back(), it != last.per_class_ap.end() && it->second ? *it->second : 0.0};
    };

    std::vector<SeedOutcome> random, weighted;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        random.push_back(simulate("random", seed));
        weighted.push_back(simulate("sum+w", seed));
    }
    auto stats = [](const std::vector<SeedOutcome>& v, double SeedOutcome::*field) {
        double mean = 0;
        for (const auto& o : v) mean += o.*field;
        mean /= static_cast<double>(v.size());
        double var = 0;
        for (const auto& o : v) var += (o.*field - mean) * (o.*field - mean);
        return std::pair{mean, var / static_cast<double>(v.size() - 1)};
    };
    auto [r_mean, r_var] = stats(random, &SeedOutcome::final_aulc);
    auto [w_mean, w_var] = stats(weighted, &SeedOutcome::final_aulc);
    double pooled_se = std::sqrt((r_var + w_var) / 2.0) * std::sqrt(2.0 / 10.0);
    double r_rare = stats(random, &SeedOutcome::rare_ap).first;
    double w_rare = stats(weighted, &SeedOutcome::rare_ap).first;

    bool pass = w_mean - r_mean > pooled_se && w_rare > r_rare;
    return {pass, fmt("final AULC sum+w %.3f vs random %.3f (margin %.3f, pooled SE %.3f); ", w_mean, r_mean,
                      w_mean - r_mean, pooled_se) +
                      fmt("rare-class AP %.3f vs %.3f; rare share %.1f%% of new-class boxes", w_rare, r_rare,
                          100.0 * static_cast<double>(rare_boxes) / static_cast<double>(new_boxes))};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict determinism() {
    auto spec = rare_class_fixture();
    spec.train_known_images = 100;
    spec.train_new_images = 200;
    spec.val_new_images = 100;
    auto fixture = generate_fixture(spec);
    fs::path root = kTmp / "determinism";
    fs::remove_all(root);
    write_voc_directory(fixture.train, root / "train");
    write_voc_directory(fixture.val, root / "val");

    ExperimentConfig config;
    config.train_annotations = root / "train";
    config.val_annotations = root / "val";
    config.new_classes = {"bird", "sheep", "cow"};
    config.methods = {SelectionMethod::parse("random"), SelectionMethod::parse("sum+w"), SelectionMethod::parse("max")};
    config.seeds = {1, 2, 3};
    config.max_batches = 10;
    config.synthetic.confusions = rare_class_confusions();

    auto first = config, second = config;
    first.output_dir = root / "first";
    second.output_dir = root / "second";
    run(first);
    run(second);

    int compared = 0, identical = 0;
    for (const auto& m : config.methods)
        for (auto s : config.seeds)
            for (const char* f : {"curve.csv", "selections.jsonl"}) {
                auto a = slurp(run_directory(first, m, s) / f);
                auto b = slurp(run_directory(second, m, s) / f);
                ++compared;
                identical += !a.empty() && a == b;
            }
    ++compared;
    identical += slurp(first.output_dir / "summary.csv") == slurp(second.output_dir / "summary.csv");
    return {identical == compared, fmt("%.0f/%.0f output files byte-identical across reruns", identical, compared)};
}

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {"1", "AULC reconstruction from printed mAP (50-250 samples)", 1, table_columns},
        {"1-all", "AULC reconstruction from printed mAP (all samples)", 1, table_all_column},
        {"2", "partition counts", 1, partition_counts},
        {"3", "metric property suite", 10, metric_properties},
        {"4", "class weighting suite", 1, weighting},
        {"5", "AP oracle equivalence", 10, ap_oracle},
        {"6", "lambda mixing", 5, lambda_mixing},
        {"7", "simulation ordering on a rare-class fixture", 120, simulation_ordering},
        {"8", "rerun determinism", 120, determinism},
    };
    return all;
}

bool run_one(const Criterion& c) {
    auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = c.check();
    } catch (const std::exception& e) {
        v = {false, std::string("threw: ") + e.what()};
    }
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool in_time = elapsed < c.time_limit_s;
    bool pass = v.pass && in_time;
    std::printf("criterion %-5s %s  %s: %s [%.2f s%s]\n", c.id.c_str(), pass ? "PASS" : "FAIL", c.title.c_str(),
                v.detail.c_str(), elapsed, in_time ? "" : ", over time limit");
    std::fflush(stdout);
    return pass;
}

}  // namespace

int main(int argc, char** argv) {
    fs::create_directories(kTmp);
    if (argc < 2) {
        bool all = true;
        for (const auto& c : criteria()) all &= run_one(c);
        return all ? 0 : 1;
    }
    for (const auto& c : criteria())
        if (c.id == argv[1]) return run_one(c) ? 0 : 1;
    std::fprintf(stderr, "unknown criterion '%s'\n", argv[1]);
    return 2;
}
