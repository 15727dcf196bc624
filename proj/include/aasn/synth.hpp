#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "aasn/geometry.hpp"
#include "aasn/tensor.hpp"

namespace aasn::synth {

using geometry::LandmarkSet;
using geometry::Point;

struct PhantomSpec {
    std::uint64_t seed = 0;
    int image_h = 128;
    int image_w = 192;
    int n_images = 2750;
    double lesion_prob = 0.5;
    int max_lesions = 2;
    double pose_magnitude = 1.0;      // scales rotation, shear, scale and shift ranges
    double nuisance_magnitude = 1.0;  // scales the one-sided intensity and width fields
    double lesion_contrast = 0.35;    // fractional darkening at the centre of a break
    double lesion_width_px = 2.5;     // width of a break along the bone
    double noise_sigma = 0.02;
    int max_variants = 3;             // mirrored notch pairs that are not lesions

    // Throws ConfigError on out-of-range fields.
    void validate() const;
};

// Maps the canonical frame (symmetry axis x = 0, symphysis at the origin)
// into the image: p = linear * c + offset.
struct Pose {
    std::array<double, 4> linear{1, 0, 0, 1};  // row-major 2x2
    Point offset;

    [[nodiscard]] Point apply(Point canonical) const;
    [[nodiscard]] Point invert(Point image) const;
};

struct PhantomSample {
    std::uint64_t seed = 0;
    int index = 0;
    Tensor image;  // 1 x 1 x H x W in [0, 1]
    LandmarkSet landmarks;
    std::vector<Point> lesions;  // image pixels, each on a bone centreline
    Pose pose;

    [[nodiscard]] int label() const { return lesions.empty() ? 0 : 1; }
    // The image point showing the anatomy mirrored from p.
    [[nodiscard]] Point mirror(Point p) const;
};

// Deterministic in (spec, index), independent of generation order.
[[nodiscard]] PhantomSample generate_sample(const PhantomSpec& spec, int index);
[[nodiscard]] std::vector<PhantomSample> generate(const PhantomSpec& spec);

// Mean intensity over a disc of `radius` px around p minus the same over the
// disc around the mirrored point. Positive when p is darker.
[[nodiscard]] double mirror_window_contrast(const PhantomSample& sample, Point p, double radius);

// RMS of I(p) - I(mirror(p)) over pixels whose mirror lies inside the image.
[[nodiscard]] double mirror_residual(const PhantomSample& sample);

struct Split {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

// Stratified by label: each class is shuffled with `seed` and cut by the
// fractions (largest-remainder rounding so that sizes sum exactly). Throws
// ConfigError if the fractions are negative, do not sum to 1, or leave a
// part empty.
[[nodiscard]] Split split_dataset(std::span<const int> labels, std::array<double, 3> fractions, std::uint64_t seed);

// k folds; fold f tests on part f, validates on part (f + 1) % k and trains
// on the rest.
[[nodiscard]] std::vector<Split> kfold_splits(std::span<const int> labels, int k, std::uint64_t seed);

} // namespace aasn::synth
