#include <cmath>
#include <cstring>
#include <set>

#include "aasn/synth.hpp"
#include "doctest.h"

using namespace aasn;
using namespace aasn::synth;

namespace {

PhantomSpec small_spec() {
    PhantomSpec s;
    s.n_images = 8;
    return s;
}

} // namespace

TEST_CASE("phantom: deterministic per (seed, index)") {
    const PhantomSpec spec = small_spec();
    const PhantomSample a = generate_sample(spec, 5);
    const PhantomSample b = generate_sample(spec, 5);
    CHECK(std::memcmp(a.image.ptr(), b.image.ptr(), a.image.numel() * sizeof(float)) == 0);
    CHECK(a.lesions.size() == b.lesions.size());
    // Order independence: the batch generator agrees with single draws.
    const auto all = generate(spec);
    CHECK(std::memcmp(all[5].image.ptr(), a.image.ptr(), a.image.numel() * sizeof(float)) == 0);
    PhantomSpec other = spec;
    other.seed = 1;
    const PhantomSample c = generate_sample(other, 5);
    CHECK(std::memcmp(a.image.ptr(), c.image.ptr(), a.image.numel() * sizeof(float)) != 0);
}

TEST_CASE("phantom: without pose, nuisance, noise or lesions the image is mirror symmetric") {
    PhantomSpec spec = small_spec();
    spec.pose_magnitude = 0;
    spec.nuisance_magnitude = 0;
    spec.noise_sigma = 0;
    spec.lesion_prob = 0;
    for (int i = 0; i < 4; ++i) {
        const PhantomSample s = generate_sample(spec, i);
        CHECK(s.label() == 0);
        CHECK(mirror_residual(s) < 1e-4);
        const geometry::SymmetryLine line = geometry::fit_symmetry_line(s.landmarks);
        CHECK(std::abs(line.direction.x) < 1e-9);
        CHECK(line.point.x == doctest::Approx(0.5 * (spec.image_w - 1)));
    }
}

TEST_CASE("phantom: nuisance-only images are asymmetric yet negative") {
    PhantomSpec spec = small_spec();
    spec.pose_magnitude = 0;
    spec.noise_sigma = 0;
    spec.lesion_prob = 0;
    for (int i = 0; i < 8; ++i) {
        const PhantomSample s = generate_sample(spec, i);
        CHECK(s.label() == 0);
        CHECK(mirror_residual(s) > 1e-3);
    }
}

TEST_CASE("phantom: landmarks follow the pose and pair across the posed axis") {
    const PhantomSpec spec = small_spec();
    for (int i = 0; i < 8; ++i) {
        const PhantomSample s = generate_sample(spec, i);
        CHECK_NOTHROW(s.landmarks.validate(spec.image_w, spec.image_h));
        for (int p = 0; p < geometry::kPairCount; ++p) {
            const Point l = s.landmarks[LandmarkSet::left(p)];
            const Point r = s.landmarks[LandmarkSet::right(p)];
            CHECK(l.x < r.x);  // l_ names the left half of the image
            const Point m = s.mirror(l);
            CHECK(geometry::distance(m, r) < 1e-6);
        }
        // The fitted line is the image of the canonical axis.
        const geometry::SymmetryLine line = geometry::fit_symmetry_line(s.landmarks);
        double rms = 0;
        for (double t : {-40.0, 0.0, 40.0}) {
            const Point on_axis = s.pose.apply({0, t});
            const Point d = on_axis - line.point;
            const double off = d.x * line.direction.y - d.y * line.direction.x;
            rms += off * off / 3;
        }
        CHECK(std::sqrt(rms) < 0.5);
    }
}

TEST_CASE("phantom: lesions are one-sided, on bone and darker than their mirror") {
    PhantomSpec spec = small_spec();
    spec.lesion_prob = 1;
    int total = 0;
    int passing = 0;
    for (int i = 0; i < 60; ++i) {
        const PhantomSample s = generate_sample(spec, i);
        REQUIRE(s.label() == 1);
        const double mid = 0.5 * (spec.image_w - 1);
        const bool left = s.lesions.front().x < mid;
        for (const Point& p : s.lesions) {
            CHECK((p.x < mid) == left);
            CHECK(geometry::sample_bilinear(s.image, p.x, p.y) < 0.9);
            ++total;
            if (mirror_window_contrast(s, p, spec.lesion_width_px / 2) > spec.lesion_contrast / 2) ++passing;
        }
    }
    CHECK(passing >= 0.95 * total);
}

TEST_CASE("phantom: spec validation") {
    PhantomSpec s;
    s.lesion_prob = 1.5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.pose_magnitude = -1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = {};
    s.image_h = 32;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("split: sizes, partition and stratification") {
    std::vector<int> labels(100);
    for (int i = 0; i < 100; ++i) labels[i] = i % 3 == 0 ? 1 : 0;
    const Split s = split_dataset(labels, {0.7, 0.1, 0.2}, 4);
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 10);
    CHECK(s.test.size() == 20);
    std::set<int> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (int i : *part) CHECK(all.insert(i).second);
    CHECK(all.size() == 100);

    std::vector<int> big(2750);
    for (int i = 0; i < 2750; ++i) big[i] = (i * 7919) % 5 < 2 ? 1 : 0;
    const Split d = split_dataset(big, {8.0 / 11, 1.0 / 11, 2.0 / 11}, 9);
    CHECK(d.train.size() == 2000);
    CHECK(d.val.size() == 250);
    CHECK(d.test.size() == 500);
    double global = 0;
    for (int v : big) global += v;
    global /= big.size();
    for (const auto* part : {&d.train, &d.val, &d.test}) {
        double rate = 0;
        for (int i : *part) rate += big[i];
        CHECK(std::abs(rate / part->size() - global) < 0.05);
    }
    // Seed determinism.
    CHECK(split_dataset(big, {8.0 / 11, 1.0 / 11, 2.0 / 11}, 9).test == d.test);
    CHECK(split_dataset(big, {8.0 / 11, 1.0 / 11, 2.0 / 11}, 10).test != d.test);
}

TEST_CASE("split: errors and folds") {
    std::vector<int> labels(10, 0);
    labels[0] = 1;
    CHECK_THROWS_AS((void)split_dataset(labels, {0.5, 0.3, 0.3}, 0), ConfigError);
    CHECK_THROWS_AS((void)split_dataset(labels, {0.95, 0.0, 0.05}, 0), ConfigError);
    CHECK_THROWS_AS((void)split_dataset(labels, {1.1, -0.2, 0.1}, 0), ConfigError);

    std::vector<int> many(50);
    for (int i = 0; i < 50; ++i) many[i] = i % 2;
    const auto folds = kfold_splits(many, 5, 3);
    REQUIRE(folds.size() == 5);
    std::set<int> tested;
    for (const Split& f : folds) {
        CHECK(f.train.size() + f.val.size() + f.test.size() == 50);
        for (int i : f.test) CHECK(tested.insert(i).second);
    }
    CHECK(tested.size() == 50);
}
