#include "alod/fixture.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "alod/errors.hpp"
#include "alod/random.hpp"

namespace alod {

namespace {

std::size_t pick(const std::vector<double>& weights, std::mt19937_64& rng) {
    std::discrete_distribution<std::size_t> d(weights.begin(), weights.end());
    return d(rng);
}

void fill(DatasetIndex& dataset, const std::string& prefix, int count,
          const std::vector<std::pair<std::string, double>>& classes, const FixtureSpec& spec, std::mt19937_64& rng) {
    if (count <= 0) return;
    if (classes.empty()) throw ConfigError("fixture: empty class list for " + prefix);
    std::vector<double> weights;
    for (const auto& [_, w] : classes) weights.push_back(w);
    std::uniform_int_distribution<int> side(40, 180);
    for (int i = 0; i < count; ++i) {
        ImageAnnotation a;
        char id[64];
        std::snprintf(id, sizeof id, "%s_%05d", prefix.c_str(), i);
        a.image_id = id;
        a.width = spec.width;
        a.height = spec.height;
        const auto& name = classes[pick(weights, rng)].first;
        std::size_t n = pick(spec.instances_per_image, rng) + 1;
        for (std::size_t k = 0; k < n; ++k) {
            int bw = side(rng);
            int bh = std::min(side(rng), spec.height - 2);
            int x0 = std::uniform_int_distribution<int>(1, spec.width - bw)(rng);
            int y0 = std::uniform_int_distribution<int>(1, spec.height - bh)(rng);
            a.boxes.push_back({name, x0, y0, x0 + bw, y0 + bh, false});
        }
        dataset.add(std::move(a));
    }
}

}  // namespace

Fixture generate_fixture(const FixtureSpec& spec) {
    std::mt19937_64 rng(derive_seed(spec.seed, "fixture"));
    Fixture f;
    fill(f.train, "train_known", spec.train_known_images, spec.known_weights, spec, rng);
    fill(f.train, "train_new", spec.train_new_images, spec.new_weights, spec, rng);
    fill(f.val, "val_known", spec.val_known_images, spec.known_weights, spec, rng);
    fill(f.val, "val_new", spec.val_new_images, spec.new_weights, spec, rng);
    return f;
}

FixtureSpec rare_class_fixture() {
    FixtureSpec spec;
    spec.known_weights = {{"aeroplane", 1}, {"dog", 1}, {"horse", 1}, {"cat", 1}, {"car", 1}, {"person", 1}};
    spec.new_weights = {{"bird", 0.55}, {"sheep", 0.40}, {"cow", 0.05}};
    spec.train_known_images = 300;
    spec.train_new_images = 600;
    spec.val_new_images = 300;
    return spec;
}

std::map<std::string, std::vector<std::string>> rare_class_confusions() {
    return {{"bird", {"aeroplane"}}, {"sheep", {"dog", "horse"}}, {"cow", {"horse", "dog"}}};
}

}  // namespace alod
