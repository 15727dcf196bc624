#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "aasn/geometry.hpp"
#include "aasn/ops.hpp"
#include "doctest.h"

using namespace aasn;
using namespace aasn::geometry;

namespace {

Point rotate(Point p, double angle) {
    return {std::cos(angle) * p.x - std::sin(angle) * p.y, std::sin(angle) * p.x + std::cos(angle) * p.y};
}

// Bilaterally symmetric about x = axis_x.
LandmarkSet symmetric_set(double axis_x) {
    LandmarkSet lm;
    const double half[kPairCount] = {2, 1, 1.5, 0.7, 0.4, 2.2, 1.8};
    const double ys[kPairCount] = {3, 1, 4, 5, 7, 6, 2};
    for (int i = 0; i < kPairCount; ++i) {
        lm[LandmarkSet::left(i)] = {axis_x - half[i], ys[i]};
        lm[LandmarkSet::right(i)] = {axis_x + half[i], ys[i]};
    }
    lm[kSymphysisSuperior] = {axis_x, 0};
    lm[kSymphysisInferior] = {axis_x, 2};
    return lm;
}

// Independent major-axis solve for the same 9 points.
Point eigen_direction(const LandmarkSet& lm) {
    const auto pts = lm.axis_points();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) << pts[i].x, pts[i].y;
    const Eigen::RowVector2d mean = m.colwise().mean();
    const Eigen::MatrixXd centered = m.rowwise() - mean;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> solver(centered.transpose() * centered);
    const Eigen::Vector2d v = solver.eigenvectors().col(1);
    return {v.x(), v.y()};
}

// Dense oracle: full-pivot LU on the same bordered kernel system.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> eigen_tps(const std::vector<Point>& src, const std::vector<Point>& dst) {
    const auto k = static_cast<Eigen::Index>(src.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k + 3, k + 3);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(k + 3, 2);
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = 0; j < k; ++j) {
            const double r = std::hypot(src[i].x - src[j].x, src[i].y - src[j].y);
            a(i, j) = r > 0 ? r * r * std::log(r) : 0.0;
        }
        a(i, k) = a(k, i) = 1;
        a(i, k + 1) = a(k + 1, i) = src[i].x;
        a(i, k + 2) = a(k + 2, i) = src[i].y;
        b(i, 0) = dst[i].x;
        b(i, 1) = dst[i].y;
    }
    const Eigen::MatrixXd sol = a.fullPivLu().solve(b);
    return {sol.topRows(k), sol.bottomRows(3)};
}

Tensor smooth_image(int h, int w) {
    Tensor img({1, 1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at(0, 0, y, x) = static_cast<float>(0.5 + 0.3 * std::sin(0.21 * x + 0.1 * y) * std::cos(0.17 * y));
    return img;
}

} // namespace

TEST_CASE("landmark schema is a left/right bijection") {
    const auto& schema = landmark_schema();
    for (int i = 0; i < kLandmarkCount; ++i) {
        const int m = schema[static_cast<std::size_t>(i)].mirror;
        CHECK(schema[static_cast<std::size_t>(m)].mirror == i);
        CHECK(schema[static_cast<std::size_t>(m)].on_pubis_ischium == schema[static_cast<std::size_t>(i)].on_pubis_ischium);
        CHECK(landmark_index(schema[static_cast<std::size_t>(i)].name) == i);
    }
    CHECK(schema[kSymphysisSuperior].mirror == kSymphysisSuperior);
    CHECK_THROWS_AS((void)landmark_index("l_femur"), SchemaError);
}

TEST_CASE("landmark files") {
    const LandmarkSet lm = symmetric_set(3.25);
    std::stringstream buf;
    write_landmarks(buf, lm);
    const LandmarkSet back = parse_landmarks(buf);
    for (int i = 0; i < kLandmarkCount; ++i) CHECK(back[i] == lm[i]);

    SUBCASE("missing entries are listed") {
        std::stringstream text;
        write_landmarks(text, lm);
        std::string body = text.str();
        body.erase(body.find("r_ischial_body"), body.find('\n', body.find("r_ischial_body")) - body.find("r_ischial_body") + 1);
        std::istringstream in("# comment line\n" + body);
        CHECK_THROWS_WITH_AS((void)parse_landmarks(in), doctest::Contains("r_ischial_body"), SchemaError);
    }
    SUBCASE("unknown and duplicate names") {
        std::istringstream unknown("l_femur 1 2\n");
        CHECK_THROWS_WITH_AS((void)parse_landmarks(unknown), doctest::Contains("l_femur"), SchemaError);
        std::istringstream dup("symphysis_superior 1 2\nsymphysis_superior 1 2\n");
        CHECK_THROWS_WITH_AS((void)parse_landmarks(dup), doctest::Contains("duplicate"), SchemaError);
        std::istringstream bad("symphysis_superior one 2\n");
        CHECK_THROWS_AS((void)parse_landmarks(bad), SchemaError);
    }
}

TEST_CASE("symmetry line: symmetric construction is vertical") {
    const SymmetryLine line = fit_symmetry_line(symmetric_set(3));
    CHECK(line.point.x == doctest::Approx(3));
    CHECK(std::abs(line.direction.x) < 1e-12);
    CHECK(line.direction.y == doctest::Approx(1));
}

TEST_CASE("symmetry line: rotation by 30 degrees") {
    const double angle = std::numbers::pi / 6;
    LandmarkSet lm = symmetric_set(3);
    for (int i = 0; i < kLandmarkCount; ++i) lm[i] = rotate(lm[i], angle);
    const SymmetryLine line = fit_symmetry_line(lm);
    const Point expected = rotate({0, 1}, angle);
    CHECK(line.direction.x == doctest::Approx(expected.x).epsilon(1e-12));
    CHECK(line.direction.y == doctest::Approx(expected.y).epsilon(1e-12));
    // The rotated axis passes through the rotated (3, 0).
    const Point on_axis = rotate({3, 0}, angle);
    const Point rel = on_axis - line.point;
    CHECK(std::abs(rel.x * line.direction.y - rel.y * line.direction.x) < 1e-9);
}

TEST_CASE("symmetry line: noisy axis points agree with an eigen solve") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0, 0.1);
    for (int trial = 0; trial < 50; ++trial) {
        LandmarkSet lm = symmetric_set(3);
        for (int i = 0; i < kLandmarkCount; ++i) lm[i] = lm[i] + Point{noise(rng), noise(rng)};
        const SymmetryLine line = fit_symmetry_line(lm);
        const Point oracle = eigen_direction(lm);
        CHECK(std::abs(std::abs(oracle.x * line.direction.x + oracle.y * line.direction.y) - 1) < 1e-12);
        CHECK(std::hypot(line.direction.x, line.direction.y) == doctest::Approx(1).epsilon(1e-12));
        double sq = 0;
        for (const Point& p : lm.axis_points()) {
            const double t = (p.y - line.point.y) / line.direction.y;
            const double x = line.point.x + t * line.direction.x;
            sq += (x - 3) * (x - 3);
        }
        CHECK(std::sqrt(sq / 9) < 0.2);
    }
}

TEST_CASE("symmetry line: equivariant under rigid motions") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        LandmarkSet lm;
        for (int i = 0; i < kLandmarkCount; ++i) lm[i] = {10 * u(rng), 10 * u(rng)};
        const double angle = std::numbers::pi * u(rng);
        const Point shift{20 * u(rng), 20 * u(rng)};
        LandmarkSet moved;
        for (int i = 0; i < kLandmarkCount; ++i) moved[i] = rotate(lm[i], angle) + shift;
        const SymmetryLine a = fit_symmetry_line(lm);
        const SymmetryLine b = fit_symmetry_line(moved);
        const Point da = rotate(a.direction, angle);
        CHECK(std::abs(std::abs(da.x * b.direction.x + da.y * b.direction.y) - 1) < 1e-9);
        const Point pa = rotate(a.point, angle) + shift;
        const Point rel = pa - b.point;
        CHECK(std::abs(rel.x * b.direction.y - rel.y * b.direction.x) < 1e-9);
    }
}

TEST_CASE("symmetry line: coincident points") {
    LandmarkSet lm;
    for (int i = 0; i < kLandmarkCount; ++i) lm[i] = {4, 4};
    CHECK_THROWS_AS((void)fit_symmetry_line(lm), GeometryError);
}

TEST_CASE("reflect_image") {
    SUBCASE("centre line is an exact horizontal flip") {
        Tensor img = smooth_image(6, 10);
        const SymmetryLine line{{4.5, 0}, {0, 1}};
        Tensor out = reflect_image(img, line);
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 10; ++x) CHECK(out.at(0, 0, y, x) == img.at(0, 0, y, 9 - x));
    }
    SUBCASE("single bright pixel") {
        Tensor img({1, 1, 9, 16});
        img.at(0, 0, 4, 10) = 1.f;
        Tensor out = reflect_image(img, {{7, 0}, {0, 1}});
        CHECK(out.at(0, 0, 4, 4) == 1.f);
    }
    SUBCASE("involution away from the borders") {
        Tensor img = smooth_image(40, 48);
        const double angle = 0.2;
        const SymmetryLine line{{23.5, 19.5}, {std::sin(angle), std::cos(angle)}};
        Tensor twice = reflect_image(reflect_image(img, line), line);
        double worst = 0;
        for (int y = 10; y < 30; ++y)
            for (int x = 12; x < 36; ++x) worst = std::max(worst, double(std::abs(twice.at(0, 0, y, x) - img.at(0, 0, y, x))));
        // Double bilinear resampling of a textured field.
        CHECK(worst < 1e-2);
    }
    SUBCASE("involution on a slowly varying image") {
        Tensor img({1, 1, 40, 48});
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 48; ++x)
                img.at(0, 0, y, x) = static_cast<float>(0.2 + 0.01 * x + 0.3 * std::sin(0.02 * x + 0.015 * y));
        const SymmetryLine line{{23.5, 19.5}, {std::sin(0.2), std::cos(0.2)}};
        Tensor twice = reflect_image(reflect_image(img, line), line);
        double worst = 0;
        for (int y = 10; y < 30; ++y)
            for (int x = 12; x < 36; ++x) worst = std::max(worst, double(std::abs(twice.at(0, 0, y, x) - img.at(0, 0, y, x))));
        CHECK(worst < 1e-4);
    }
    SUBCASE("point reflection is an involution") {
        const SymmetryLine line{{3, 1}, {0.6, 0.8}};
        const Point p{-2, 7.5};
        const Point back = line.reflect(line.reflect(p));
        CHECK(back.x == doctest::Approx(p.x));
        CHECK(back.y == doctest::Approx(p.y));
    }
}

TEST_CASE("reflect_image involution is exact for axis-aligned lines") {
    Tensor img = smooth_image(12, 15);
    const SymmetryLine line{{7, 0}, {0, 1}};
    Tensor twice = reflect_image(reflect_image(img, line), line);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 15; ++x) CHECK(std::abs(twice.at(0, 0, y, x) - img.at(0, 0, y, x)) < 1e-4);
}

TEST_CASE("ROI extraction") {
    LandmarkSet lm;
    const auto& schema = landmark_schema();
    int flagged = 0;
    for (int i = 0; i < kLandmarkCount; ++i) {
        if (!schema[static_cast<std::size_t>(i)].on_pubis_ischium) {
            lm[i] = {1, 1};  // far outside the box, must be ignored
            continue;
        }
        lm[i] = (flagged++ % 2 == 0) ? Point{10, 10} : Point{50, 30};
    }
    lm[kSymphysisSuperior] = {30, 20};
    const Roi tight = make_roi(lm, 0, 100, 100, 16, 32);
    CHECK(tight.x0 == 10);
    CHECK(tight.y0 == 10);
    CHECK(tight.x1 == 50);
    CHECK(tight.y1 == 30);
    const Roi grown = make_roi(lm, 0.1, 100, 100, 16, 32);
    CHECK(grown.x0 == doctest::Approx(6));
    CHECK(grown.y0 == doctest::Approx(8));
    CHECK(grown.x1 == doctest::Approx(54));
    CHECK(grown.y1 == doctest::Approx(32));
    const Point centre = grown.to_roi({30, 20});
    CHECK(centre.x == doctest::Approx(15.5));
    CHECK(centre.y == doctest::Approx(7.5));
    const Point back = grown.to_image(centre);
    CHECK(back.x == doctest::Approx(30));

    const Roi clipped = make_roi(lm, 1.0, 40, 55, 16, 32);
    CHECK(clipped.x0 == 0);
    CHECK(clipped.y0 == 0);
    CHECK(clipped.x1 == 54);
    CHECK(clipped.y1 == 39);

    Tensor img = smooth_image(100, 100);
    const RoiExtraction ex = extract_roi(img, lm, 0.1, 16, 32);
    CHECK(ex.image.shape() == Shape{1, 1, 16, 32});
    CHECK(ex.landmarks[kSymphysisSuperior].x == doctest::Approx(15.5));
    CHECK(ex.image.at(0, 0, 0, 0) == doctest::Approx(sample_bilinear(img, 6, 8)));

    LandmarkSet flat;
    for (int i = 0; i < kLandmarkCount; ++i) flat[i] = {5, 5};
    CHECK_THROWS_AS((void)make_roi(flat, 0.1, 100, 100, 16, 32), GeometryError);
}

TEST_CASE("TPS: identity and translation") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 50);
    std::vector<Point> src(10);
    for (auto& p : src) p = {u(rng), u(rng)};
    const TpsWarp id = fit_tps(src, src, 0);
    CHECK(std::abs(id.affine()[0][0]) < 1e-8);
    CHECK(std::abs(id.affine()[1][0]) < 1e-8);
    CHECK(id.affine()[0][1] == doctest::Approx(1).epsilon(1e-10));
    CHECK(id.affine()[1][2] == doctest::Approx(1).epsilon(1e-10));
    for (const Point& w : id.weights()) {
        CHECK(std::abs(w.x) < 1e-8);
        CHECK(std::abs(w.y) < 1e-8);
    }
    std::vector<Point> dst;
    for (const Point& p : src) dst.push_back(p + Point{5, -2});
    const TpsWarp shift = fit_tps(src, dst, 0);
    for (int i = 0; i < 20; ++i) {
        const Point q{u(rng) * 2 - 25, u(rng)};
        const Point m = shift(q);
        CHECK(std::abs(m.x - q.x - 5) < 1e-6);
        CHECK(std::abs(m.y - q.y + 2) < 1e-6);
    }
}

TEST_CASE("TPS: interpolation, side conditions and the dense oracle") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0, 64);
    std::normal_distribution<double> jitter(0, 3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Point> src(8), dst(8);
        for (int i = 0; i < 8; ++i) {
            src[static_cast<std::size_t>(i)] = {u(rng), u(rng)};
            dst[static_cast<std::size_t>(i)] = src[static_cast<std::size_t>(i)] + Point{jitter(rng), jitter(rng)};
        }
        const TpsWarp warp = fit_tps(src, dst, 0);
        double sw = 0, swx = 0, swy = 0, tw = 0, twx = 0, twy = 0;
        for (int i = 0; i < 8; ++i) {
            const Point m = warp(src[static_cast<std::size_t>(i)]);
            CHECK(distance(m, dst[static_cast<std::size_t>(i)]) < 1e-4);
            const Point w = warp.weights()[static_cast<std::size_t>(i)];
            sw += w.x;
            swx += w.x * src[static_cast<std::size_t>(i)].x;
            swy += w.x * src[static_cast<std::size_t>(i)].y;
            tw += w.y;
            twx += w.y * src[static_cast<std::size_t>(i)].x;
            twy += w.y * src[static_cast<std::size_t>(i)].y;
        }
        for (double s : {sw, swx, swy, tw, twx, twy}) CHECK(std::abs(s) < 1e-6);

        const auto [weights, affine] = eigen_tps(src, dst);
        for (int i = 0; i < 8; ++i) {
            CHECK(warp.weights()[static_cast<std::size_t>(i)].x == doctest::Approx(weights(i, 0)).epsilon(1e-6));
            CHECK(warp.weights()[static_cast<std::size_t>(i)].y == doctest::Approx(weights(i, 1)).epsilon(1e-6));
        }
        for (int c = 0; c < 3; ++c) {
            CHECK(warp.affine()[0][static_cast<std::size_t>(c)] == doctest::Approx(affine(c, 0)).epsilon(1e-6));
            CHECK(warp.affine()[1][static_cast<std::size_t>(c)] == doctest::Approx(affine(c, 1)).epsilon(1e-6));
        }
    }
}

TEST_CASE("TPS: regularization trades exactness for smoothness") {
    std::vector<Point> src{{0, 0}, {10, 0}, {0, 10}, {10, 10}, {5, 5}};
    std::vector<Point> dst = src;
    dst[4] = {6, 5};
    const TpsWarp exact = fit_tps(src, dst, 0);
    const TpsWarp smooth = fit_tps(src, dst, 50);
    CHECK(distance(exact(src[4]), dst[4]) < 1e-9);
    CHECK(distance(smooth(src[4]), dst[4]) > 1e-3);
    CHECK(smooth.lambda() == 50);
}

TEST_CASE("TPS: degenerate inputs") {
    std::vector<Point> line{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    CHECK_THROWS_AS((void)fit_tps(line, line, 0), SingularSystemError);
    CHECK_THROWS_AS((void)fit_tps(line, line, 1e-3), SingularSystemError);
    std::vector<Point> two{{0, 0}, {1, 0}};
    CHECK_THROWS_AS((void)fit_tps(two, two, 0), ContractError);
    std::vector<Point> three{{0, 0}, {1, 0}, {0, 1}};
    CHECK_THROWS_AS((void)fit_tps(three, two, 0), ContractError);
    std::vector<Point> repeated{{0, 0}, {1, 0}, {0, 1}, {0, 1}};
    std::vector<Point> repeated_dst{{0, 0}, {1, 0}, {0, 1}, {0, 2}};
    CHECK_THROWS_AS((void)fit_tps(repeated, repeated_dst, 0), SingularSystemError);
}

TEST_CASE("warp_to_grid") {
    SUBCASE("identity warp gives the identity grid") {
        for (int stride : {1, 2, 4, 8}) {
            Tensor grid = warp_to_grid<float>(TpsWarp::identity(), 8, 16, 8 * stride, 16 * stride);
            Tensor id = identity_grid<float>(1, 8, 16);
            for (std::size_t i = 0; i < grid.numel(); ++i) CHECK(std::abs(grid.data()[i] - id.data()[i]) < 1e-6);
            std::mt19937_64 rng(1);
            std::uniform_real_distribution<float> u(0, 1);
            Tensor feat({1, 3, 8, 16});
            for (auto& v : feat.data()) v = u(rng);
            Tensor out = grid_sample_bilinear(feat, grid);
            for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.data()[i] - feat.data()[i]) < 1e-6);
        }
    }
    SUBCASE("translation by one stride shifts one cell") {
        const int stride = 4;
        std::vector<Point> src{{0, 0}, {30, 0}, {0, 20}, {30, 20}, {11, 7}};
        std::vector<Point> dst;
        for (const Point& p : src) dst.push_back(p + Point{double(stride), 0});
        const TpsWarp warp = fit_tps(src, dst, 0);
        Tensor grid = warp_to_grid<double>(warp, 4, 8, 16, 32).cast<float>();
        Tensor id = identity_grid<float>(1, 4, 8);
        Tensor feat({1, 1, 4, 8});
        for (std::size_t i = 0; i < feat.numel(); ++i) feat.data()[i] = float(i);
        Tensor out = grid_sample_bilinear(feat, grid);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 8; ++x) {
                CHECK(grid.at(0, 0, y, x) == doctest::Approx(id.at(0, 0, y, x) + 2.0 / 7).epsilon(1e-6));
                CHECK(out.at(0, 0, y, x) == doctest::Approx(x < 7 ? feat.at(0, 0, y, x + 1) : 0.f).epsilon(1e-5));
            }
    }
    SUBCASE("non-integer stride") {
        CHECK_THROWS_AS((void)warp_to_grid<float>(TpsWarp::identity(), 5, 8, 16, 32), ContractError);
        CHECK_THROWS_AS((void)warp_to_grid<float>(TpsWarp::identity(), 4, 4, 16, 32), ContractError);
    }
}

TEST_CASE("warping features commutes with a pooling encoder on smooth inputs") {
    const int h = 32, w = 64, stride = 4;
    Tensor img = smooth_image(h, w);
    std::vector<Point> src{{4, 4}, {60, 3}, {5, 28}, {58, 29}, {30, 15}, {20, 8}, {45, 22}};
    std::vector<Point> dst;
    for (const Point& p : src) dst.push_back(p + Point{1.5 + 0.03 * p.y, -1.0 + 0.02 * p.x});
    const TpsWarp warp = fit_tps(src, dst, 0);
    auto encode = [](const Tensor& x) { return avgpool2x2(avgpool2x2(x)); };
    Tensor image_first = encode(warp_image(img, warp));
    Tensor feature_first = grid_sample_bilinear(encode(img), warp_to_grid<float>(warp, h / stride, w / stride, h, w));
    float lo = 1e9f, hi = -1e9f;
    for (float v : feature_first.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Compare away from the border where zero padding differs in the two orders.
    double diff = 0;
    int count = 0;
    for (int y = 1; y < h / stride - 1; ++y)
        for (int x = 1; x < w / stride - 1; ++x) {
            diff += std::abs(image_first.at(0, 0, y, x) - feature_first.at(0, 0, y, x));
            ++count;
        }
    CHECK(diff / count < 0.05 * (hi - lo));
}

TEST_CASE("pair geometry of a symmetric landmark set is the identity warp") {
    LandmarkSet lm = symmetric_set(0);
    for (int i = 0; i < kLandmarkCount; ++i) lm[i] = {31.5 + 6 * lm[i].x, 10 + 4 * lm[i].y};
    const PairGeometry g = build_pair_geometry(lm, 64, 64, 0.1, 16, 32, 0);
    CHECK(g.frames.roi.x0 == doctest::Approx(g.frames.roi_flipped.x0));
    for (double x : {0.0, 7.3, 31.0})
        for (double y : {0.0, 4.2, 15.0}) {
            const Point q = g.warp({x, y});
            CHECK(q.x == doctest::Approx(x).epsilon(1e-9));
            CHECK(q.y == doctest::Approx(y).epsilon(1e-9));
            const Point f = g.frames.to_flipped({x, y});
            CHECK(f.x == doctest::Approx(31 - x).epsilon(1e-9));
            const Point back = g.frames.from_flipped(f);
            CHECK(back.x == doctest::Approx(x).epsilon(1e-9));
        }
    for (int i = 0; i < kLandmarkCount; ++i) {
        CHECK(distance(g.warp(g.roi_landmarks[i]), g.flipped_roi_landmarks[i]) < 1e-4);
    }
}

TEST_CASE("flipped ROI read equals reflect-then-extract") {
    LandmarkSet lm = symmetric_set(0);
    for (int i = 0; i < kLandmarkCount; ++i) lm[i] = rotate({31.5 + 6 * lm[i].x, 10 + 4 * lm[i].y}, 0.05);
    Tensor img = smooth_image(64, 64);
    const PairGeometry g = build_pair_geometry(lm, 64, 64, 0.1, 16, 32, 1e-3);
    Tensor direct = extract_flipped_roi(img, g.frames);
    Tensor two_step = resample_roi(reflect_image(img, g.frames.line), g.frames.roi_flipped);
    double worst = 0;
    for (std::size_t i = 0; i < direct.numel(); ++i)
        worst = std::max(worst, double(std::abs(direct.data()[i] - two_step.data()[i])));
    CHECK(worst < 2e-2);
}
