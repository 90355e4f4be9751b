#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "alod/annotation.hpp"

namespace alod {

/// Recipe for a synthetic VOC-style dataset. Each image shows one class,
/// drawn by `*_weights`, with a small random number of instances.
struct FixtureSpec {
    std::vector<std::pair<std::string, double>> known_weights;
    std::vector<std::pair<std::string, double>> new_weights;
    int train_known_images = 200;
    int train_new_images = 400;
    int val_new_images = 200;
    int val_known_images = 0;
    /// P(1 instance), P(2 instances), ...
    std::vector<double> instances_per_image{0.45, 0.25, 0.15, 0.10, 0.05};
    int width = 500;
    int height = 375;
    std::uint64_t seed = 7;
};

struct Fixture {
    DatasetIndex train;
    DatasetIndex val;
};

Fixture generate_fixture(const FixtureSpec& spec);

/// Three new classes (bird, sheep and a rare cow at ~5% of new-class
/// instances) next to six known classes, with matching confusion sets.
FixtureSpec rare_class_fixture();
std::map<std::string, std::vector<std::string>> rare_class_confusions();

}  // namespace alod
