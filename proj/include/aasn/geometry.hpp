#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aasn/tensor.hpp"

namespace aasn::geometry {

struct Point {
    double x = 0;
    double y = 0;

    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Point&, const Point&) = default;
};

[[nodiscard]] double distance(Point a, Point b);

// ---------------------------------------------------------------------------
// Landmark schema
//
// 16 landmarks: 7 bilateral pairs (left entry at 2i, right entry at 2i + 1)
// followed by the two pubic-symphysis points. `on_pubis_ischium` marks the
// subset whose bounding box defines the anterior-pelvis ROI.
// ---------------------------------------------------------------------------

inline constexpr int kLandmarkCount = 16;
inline constexpr int kPairCount = 7;
inline constexpr int kSymphysisSuperior = 14;
inline constexpr int kSymphysisInferior = 15;

struct LandmarkInfo {
    std::string_view name;
    int mirror;  // index of the bilateral counterpart; symphysis points map to themselves
    bool on_pubis_ischium;
};

[[nodiscard]] const std::array<LandmarkInfo, kLandmarkCount>& landmark_schema();

// Throws SchemaError for names outside the schema.
[[nodiscard]] int landmark_index(std::string_view name);

class LandmarkSet {
public:
    LandmarkSet() = default;
    explicit LandmarkSet(const std::array<Point, kLandmarkCount>& points) : points_(points) {}

    Point& operator[](int i) { return points_.at(static_cast<std::size_t>(i)); }
    const Point& operator[](int i) const { return points_.at(static_cast<std::size_t>(i)); }
    [[nodiscard]] std::span<const Point, kLandmarkCount> points() const { return points_; }

    [[nodiscard]] static int left(int pair) { return 2 * pair; }
    [[nodiscard]] static int right(int pair) { return 2 * pair + 1; }

    // The 9 points that lie on the symmetry axis: pair midpoints plus the
    // two symphysis points.
    [[nodiscard]] std::array<Point, kPairCount + 2> axis_points() const;

    // Throws GeometryError unless every coordinate is finite and inside
    // [0, width - 1] x [0, height - 1].
    void validate(int width, int height) const;

private:
    std::array<Point, kLandmarkCount> points_{};
};

// "name x y" per line; blank lines and '#' comments are ignored. Missing,
// duplicate or unknown names raise SchemaError naming the entries at fault.
[[nodiscard]] LandmarkSet parse_landmarks(std::istream& in);
[[nodiscard]] LandmarkSet read_landmarks(const std::filesystem::path& path);
void write_landmarks(std::ostream& out, const LandmarkSet& lm);
void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm);

// ---------------------------------------------------------------------------
// Symmetry line, reflection and ROI
// ---------------------------------------------------------------------------

struct SymmetryLine {
    Point point;
    Point direction;  // unit length, oriented towards increasing y

    [[nodiscard]] Point reflect(Point p) const;
};

// Total-least-squares line through LandmarkSet::axis_points().
[[nodiscard]] SymmetryLine fit_symmetry_line(const LandmarkSet& lm);

// Mirrors every landmark across the line and swaps left/right labels, so the
// result describes the reflected image with the original naming.
[[nodiscard]] LandmarkSet reflect_landmarks(const LandmarkSet& lm, const SymmetryLine& line);

// Bilinear read with zero outside the image. `img` is 1 x 1 x H x W; pixel
// centres sit at integer coordinates.
[[nodiscard]] double sample_bilinear(const Tensor& img, double x, double y);

// Each output pixel is the bilinear sample at its mirror position.
[[nodiscard]] Tensor reflect_image(const Tensor& img, const SymmetryLine& line);

struct Roi {
    double x0 = 0;
    double y0 = 0;
    double x1 = 0;
    double y1 = 0;
    int out_h = 0;
    int out_w = 0;

    // ROI pixel (0, 0) is the rect corner (x0, y0); (out_w - 1, out_h - 1) is (x1, y1).
    [[nodiscard]] Point to_roi(Point image_pt) const;
    [[nodiscard]] Point to_image(Point roi_pt) const;
};

// Bounding box of the pubis/ischium landmarks, grown by margin_frac of its
// width (horizontally) and height (vertically) on each side, clipped to the
// image. Throws GeometryError if the subset is empty or the box degenerate.
[[nodiscard]] Roi make_roi(const LandmarkSet& lm, double margin_frac, int image_h, int image_w, int out_h, int out_w);

[[nodiscard]] Tensor resample_roi(const Tensor& img, const Roi& roi);

struct RoiExtraction {
    Tensor image;
    Roi roi;
    LandmarkSet landmarks;  // in ROI pixel coordinates
};

[[nodiscard]] RoiExtraction extract_roi(const Tensor& img, const LandmarkSet& lm, double margin_frac, int out_h,
                                        int out_w);

// Pair of ROI frames related by the reflection: the ROI cut from the image
// and the ROI cut from its mirror image.
struct MirrorFrames {
    SymmetryLine line;
    Roi roi;
    Roi roi_flipped;

    // A point of the original ROI to the place the same anatomy shows in the
    // flipped ROI, and back.
    [[nodiscard]] Point to_flipped(Point roi_pt) const;
    [[nodiscard]] Point from_flipped(Point flipped_pt) const;
};

// ---------------------------------------------------------------------------
// Thin-plate spline
// ---------------------------------------------------------------------------

// U(r) = r^2 log r, U(0) = 0.
[[nodiscard]] double tps_kernel(double r);

class TpsWarp {
public:
    TpsWarp() = default;

    // Interpolates src[i] -> dst[i]; lambda is added to the kernel diagonal.
    // Throws ContractError for fewer than 3 points or mismatched lengths and
    // SingularSystemError for collinear control points.
    static TpsWarp fit(std::span<const Point> src, std::span<const Point> dst, double lambda);
    static TpsWarp identity();

    [[nodiscard]] Point operator()(Point p) const;

    [[nodiscard]] std::span<const Point> control_points() const { return control_; }
    // Rows: x output, y output. Columns: constant, x, y.
    [[nodiscard]] const std::array<std::array<double, 3>, 2>& affine() const { return affine_; }
    [[nodiscard]] std::span<const Point> weights() const { return weights_; }
    [[nodiscard]] double lambda() const { return lambda_; }

    // Rebuilds a fitted warp from stored coefficients (manifest cache).
    static TpsWarp from_coefficients(std::vector<Point> control, std::array<std::array<double, 3>, 2> affine,
                                     std::vector<Point> weights, double lambda);

private:
    std::vector<Point> control_;
    std::vector<Point> weights_;
    std::array<std::array<double, 3>, 2> affine_{{{0, 1, 0}, {0, 0, 1}}};
    double lambda_ = 0;
};

[[nodiscard]] TpsWarp fit_tps(std::span<const Point> src, std::span<const Point> dst, double lambda);

// Sampling grid (1 x 2 x feat_h x feat_w) for grid_sample_bilinear: each
// feature cell centre is taken to ROI pixels, pushed through the backward
// warp and expressed in normalized coordinates of the source feature map.
// Throws ContractError unless the ROI is an integer multiple of the map.
template <typename T>
[[nodiscard]] BasicTensor<T> warp_to_grid(const TpsWarp& warp, int feat_h, int feat_w, int roi_h, int roi_w);

// Image-space alignment: out(p) = img(warp(p)), bilinear, zero outside.
[[nodiscard]] Tensor warp_image(const Tensor& img, const TpsWarp& warp);

// Control point pairs for the ROI-level warp: every landmark of the original
// ROI against the same-named landmark of the flipped ROI. Fit with
// fit_tps(pairs.image, pairs.flipped, lambda) to get the map from the
// original ROI frame into the flipped one.
struct ControlPairs {
    std::vector<Point> image;
    std::vector<Point> flipped;
};
[[nodiscard]] ControlPairs control_pairs(const LandmarkSet& roi_landmarks, const LandmarkSet& flipped_roi_landmarks);

// Reads the flipped ROI straight from the unflipped image: equivalent to
// resample_roi(reflect_image(img, line), roi_flipped) but with a single
// interpolation instead of two.
[[nodiscard]] Tensor extract_flipped_roi(const Tensor& img, const MirrorFrames& frames);

// Everything the training pipeline needs about one image's geometry.
struct PairGeometry {
    MirrorFrames frames;
    LandmarkSet roi_landmarks;
    LandmarkSet flipped_roi_landmarks;
    TpsWarp warp;  // original ROI frame -> flipped ROI frame
};

[[nodiscard]] PairGeometry build_pair_geometry(const LandmarkSet& lm, int image_h, int image_w, double margin_frac,
                                               int out_h, int out_w, double lambda_tps);

} // namespace aasn::geometry
