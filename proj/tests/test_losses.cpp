#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "aasn/losses.hpp"
#include "aasn/ops.hpp"
#include "doctest.h"

using namespace aasn;
using namespace aasn::losses;
using geometry::MirrorFrames;
using geometry::TpsWarp;

namespace {

double naive_bce(double z, double y) {
    const double p = 1.0 / (1.0 + std::exp(-z));
    return -(y * std::log(p) + (1 - y) * std::log(1 - p));
}

// Reference margin loss straight from the per-pixel definition.
double reference_contrastive(const Tensor64& a, const Tensor64& b, const Tensor64& mask, double margin) {
    const Shape& s = a.shape();
    double total = 0;
    for (int n = 0; n < s.n; ++n)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) {
                double d = 0;
                for (int c = 0; c < s.c; ++c) d += std::pow(a.at(n, c, y, x) - b.at(n, c, y, x), 2);
                total += mask.at(n, 0, y, x) > 0.5 ? std::max(0.0, margin - d) : d;
            }
    return total / (s.n * s.h * s.w);
}

Tensor64 random_tensor(Shape s, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> dist(0, sd);
    Tensor64 t(s);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

MirrorFrames mirror_about_centre() {
    MirrorFrames f;
    f.line = {{63.5, 0}, {0, 1}};
    f.roi = {0, 0, 127, 63, 64, 128};
    f.roi_flipped = f.roi;
    return f;
}

} // namespace

TEST_CASE("scaled dilation radius") {
    CHECK(scaled_dilation_radius(256) == 50);
    CHECK(scaled_dilation_radius(64) == 12);
    CHECK(scaled_dilation_radius(128) == 25);
}

TEST_CASE("mask of a single point is a disc") {
    // Keep at least six cells of radius so the grid resolves the disc.
    for (int stride : {1, 2, 4}) {
        const double r = 12.0 * std::max(1, stride / 2);
        const Tensor m = make_mask({{{63.5, 31.5}}, r}, 64, 128, stride);
        CHECK(m.shape() == Shape{1, 1, 64 / stride, 128 / stride});
        double area = 0;
        for (float v : m.data()) area += v;
        const double expected = std::numbers::pi * r * r / (stride * stride);
        CHECK(std::abs(area - expected) <= 0.1 * expected);
    }
    const Tensor m = make_mask({{{10, 10}}, 3}, 64, 128, 1);
    CHECK(m.at(0, 0, 10, 13) == 1.f);
    CHECK(m.at(0, 0, 10, 14) == 0.f);
    CHECK(m.at(0, 0, 12, 12) == 1.f);  // distance sqrt(8) < 3
    const Tensor empty = make_mask({{}, 12}, 64, 128, 4);
    for (float v : empty.data()) CHECK(v == 0.f);
    CHECK_THROWS_AS((void)make_mask({{}, 12}, 64, 128, 3), ContractError);
}

TEST_CASE("contrast mask under a symmetric pair is the mask plus its mirror") {
    const Tensor m = make_mask({{{20, 30}}, 6}, 64, 128, 4);
    const Tensor joined = make_contrast_mask(m, 4, TpsWarp::identity(), mirror_about_centre(), 4);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 32; ++j) {
            const float want = std::max(m.at(0, 0, i, j), m.at(0, 0, i, 31 - j));
            CHECK(joined.at(0, 0, i, j) == want);
        }
    // At feature stride the union is max-pooled.
    const Tensor pooled = make_contrast_mask(m, 4, TpsWarp::identity(), mirror_about_centre(), 8);
    CHECK(pooled.shape() == Shape{1, 1, 8, 16});
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 16; ++j) {
            float want = 0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) want = std::max(want, joined.at(0, 0, 2 * i + a, 2 * j + b));
            CHECK(pooled.at(0, 0, i, j) == want);
        }
}

TEST_CASE("contrast mask follows a translating warp") {
    const Tensor m = make_mask({{{20, 30}}, 6}, 64, 128, 4);
    const TpsWarp shift = TpsWarp::from_coefficients({}, {{{8, 1, 0}, {0, 0, 1}}}, {}, 0);
    const Tensor joined = make_contrast_mask(m, 4, shift, mirror_about_centre(), 4);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 32; ++j) {
            const int src = 29 - j;
            const float mirrored = src >= 0 ? m.at(0, 0, i, src) : 0.f;
            CHECK(joined.at(0, 0, i, j) == std::max(m.at(0, 0, i, j), mirrored));
        }
}

TEST_CASE("bce with logits") {
    const Tensor64 z({1, 1, 1, 6}, {-3.0, -0.5, 0.0, 0.25, 2.0, 5.0});
    const Tensor64 y({1, 1, 1, 6}, {0.0, 1.0, 1.0, 0.0, 1.0, 0.0});
    double expected = 0;
    for (int i = 0; i < 6; ++i) expected += naive_bce(z.data()[i], y.data()[i]);
    CHECK(bce_with_logits(z, y).item() == doctest::Approx(expected / 6).epsilon(1e-12));

    // Saturated logits stay finite.
    const Tensor64 big({1, 1, 1, 2}, {200.0, -200.0});
    const Tensor64 ones({1, 1, 1, 2}, {1.0, 1.0});
    CHECK(bce_with_logits(big, ones).item() == doctest::Approx(100.0));

    // Equal to the probability form on moderate values.
    Tensor prob = sigmoid(z.cast<float>());
    CHECK(bce_loss(prob, y.cast<float>()) == doctest::Approx(expected / 6).epsilon(1e-5));

    // Gradient is (sigmoid(z) - y) / n.
    Tape64 tape;
    Tensor64 zl = z.clone();
    zl.set_requires_grad();
    {
        TapeScope64 scope(tape);
        backward(bce_with_logits(zl, y));
    }
    for (int i = 0; i < 6; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z.data()[i]));
        CHECK(zl.grad()[i] == doctest::Approx((p - y.data()[i]) / 6).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)bce_with_logits(z, Tensor64({1, 1, 1, 5})), DimensionError);
}

TEST_CASE("contrastive loss: hand values") {
    const Tensor64 a({1, 2, 1, 1}, {1.0, 0.0});
    const Tensor64 b({1, 2, 1, 1}, {0.0, 0.0});
    const Tensor64 off({1, 1, 1, 1}, {0.0});
    const Tensor64 on({1, 1, 1, 1}, {1.0});
    CHECK(contrastive_loss(a, b, off, 0.5).item() == doctest::Approx(1.0));
    CHECK(contrastive_loss(a, b, on, 0.5).item() == 0.0);
    const Tensor64 half({1, 2, 1, 1}, {0.5, 0.0});
    CHECK(contrastive_loss(half, b, on, 0.5).item() == doctest::Approx(0.25));
    CHECK(contrastive_loss(half, b, off, 0.5).item() == doctest::Approx(0.25));
    // Sum reduction over two pixels.
    const Tensor64 a2({1, 1, 1, 2}, {1.0, 0.0});
    const Tensor64 b2({1, 1, 1, 2}, {0.0, 0.0});
    const Tensor64 m2({1, 1, 1, 2}, {0.0, 1.0});
    CHECK(contrastive_loss(a2, b2, m2, 0.5, {}, Reduction::sum).item() == doctest::Approx(1.5));
    CHECK(contrastive_loss(a2, b2, m2, 0.5, {}, Reduction::mean).item() == doctest::Approx(0.75));
    CHECK_THROWS_AS((void)contrastive_loss(a, b, Tensor64({1, 1, 2, 1}), 0.5), DimensionError);
}

TEST_CASE("contrastive loss: properties") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor64 a = random_tensor({2, 3, 4, 5}, rng, 0.4);
        const Tensor64 b = random_tensor({2, 3, 4, 5}, rng, 0.4);
        Tensor64 mask({2, 1, 4, 5});
        for (double& v : mask.data()) v = rng() % 3 == 0 ? 1.0 : 0.0;
        const double value = contrastive_loss(a, b, mask, 0.5).item();
        CHECK(value >= 0);
        CHECK(value == doctest::Approx(reference_contrastive(a, b, mask, 0.5)).epsilon(1e-12));
        // Symmetric in its two feature maps.
        CHECK(contrastive_loss(b, a, mask, 0.5).item() == doctest::Approx(value).epsilon(1e-12));
        // Zero on identical maps with an empty mask.
        CHECK(contrastive_loss(a, a, Tensor64({2, 1, 4, 5}), 0.5).item() == 0.0);
    }
}

TEST_CASE("contrastive loss: gradient against finite differences") {
    std::mt19937_64 rng(11);
    const Tensor64 mask({1, 1, 3, 3}, {1, 0, 1, 0, 1, 0, 0, 0, 1});
    Tensor64 a = random_tensor({1, 2, 3, 3}, rng, 0.3);
    Tensor64 b = random_tensor({1, 2, 3, 3}, rng, 0.3);
    Tensor64 w = random_tensor({2, 2, 1, 1}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    w.set_requires_grad();
    const Projection<double> proj = [&](const Tensor64& x) { return linear_1x1(x, w, Tensor64{}); };
    Tape64 tape;
    {
        TapeScope64 scope(tape);
        backward(contrastive_loss(a, b, mask, 0.5, proj));
    }
    const double h = 1e-6;
    for (Tensor64* t : {&a, &b, &w}) {
        for (std::size_t i = 0; i < t->numel(); ++i) {
            const double keep = t->data()[i];
            t->data()[i] = keep + h;
            const double up = contrastive_loss(a, b, mask, 0.5, proj).item();
            t->data()[i] = keep - h;
            const double down = contrastive_loss(a, b, mask, 0.5, proj).item();
            t->data()[i] = keep;
            CHECK(t->grad()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("contrastive loss: hinge is inactive at the margin") {
    const Tensor64 b({1, 1, 1, 1}, {0.0});
    // 0.5^2 is exactly the margin.
    Tensor64 a({1, 1, 1, 1}, {0.5});
    const Tensor64 on({1, 1, 1, 1}, {1.0});
    a.set_requires_grad();
    Tape64 tape;
    {
        TapeScope64 scope(tape);
        backward(contrastive_loss(a, b, on, 0.25));
    }
    CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("total loss") {
    const Tensor64 lb = Tensor64::scalar(0.7);
    const Tensor64 lc = Tensor64::scalar(0.4);
    CHECK(total_loss(lb, lc, 0.5).item() == doctest::Approx(0.9));
    CHECK(total_loss(lb, lc, 0.0).item() == doctest::Approx(0.7));
}

TEST_CASE("annotation files") {
    std::istringstream in("# header\n1.5 2\n\n  3 4 # trailing\n");
    const auto pts = parse_annotations(in);
    REQUIRE(pts.size() == 2);
    CHECK(pts[1].x == 3.0);
    std::istringstream bad("1 2 3\n");
    CHECK_THROWS_AS((void)parse_annotations(bad), SchemaError);
    std::istringstream half("1\n");
    CHECK_THROWS_AS((void)parse_annotations(half), SchemaError);
    std::istringstream empty("");
    CHECK(parse_annotations(empty).empty());
}
