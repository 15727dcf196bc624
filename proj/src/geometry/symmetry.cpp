#include <algorithm>
#include <cmath>
#include <limits>

#include "aasn/geometry.hpp"

namespace aasn::geometry {

Point SymmetryLine::reflect(Point p) const {
    const Point rel = p - point;
    const double along = rel.x * direction.x + rel.y * direction.y;
    const Point foot = point + along * direction;
    return 2.0 * foot - p;
}

SymmetryLine fit_symmetry_line(const LandmarkSet& lm) {
    const auto pts = lm.axis_points();
    Point centroid;
    for (const Point& p : pts) centroid = centroid + p;
    centroid = (1.0 / static_cast<double>(pts.size())) * centroid;

    double sxx = 0;
    double sxy = 0;
    double syy = 0;
    for (const Point& p : pts) {
        const Point d = p - centroid;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    const double scale = 1.0 + centroid.x * centroid.x + centroid.y * centroid.y;
    if (sxx + syy <= 1e-20 * scale) {
        throw GeometryError("symmetry line is undefined: all axis points coincide");
    }
    // Major axis of the 2x2 scatter matrix.
    const double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    Point dir{std::cos(theta), std::sin(theta)};
    if (dir.y < 0 || (dir.y == 0 && dir.x < 0)) dir = -1.0 * dir;
    return {centroid, dir};
}

LandmarkSet reflect_landmarks(const LandmarkSet& lm, const SymmetryLine& line) {
    LandmarkSet out;
    const auto& schema = landmark_schema();
    for (int i = 0; i < kLandmarkCount; ++i) {
        out[i] = line.reflect(lm[schema[static_cast<std::size_t>(i)].mirror]);
    }
    return out;
}

double sample_bilinear(const Tensor& img, double x, double y) {
    const Shape& s = img.shape();
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double ax = x - fx;
    const double ay = y - fy;
    const long x0 = static_cast<long>(fx);
    const long y0 = static_cast<long>(fy);
    const float* data = img.ptr();
    auto tap = [&](long xi, long yi, double wt) {
        if (wt == 0.0 || xi < 0 || yi < 0 || xi >= s.w || yi >= s.h) return 0.0;
        return wt * static_cast<double>(data[yi * s.w + xi]);
    };
    return tap(x0, y0, (1 - ax) * (1 - ay)) + tap(x0 + 1, y0, ax * (1 - ay)) + tap(x0, y0 + 1, (1 - ax) * ay) +
           tap(x0 + 1, y0 + 1, ax * ay);
}

namespace {

void require_single_plane(const Tensor& img, const char* who) {
    const Shape& s = img.shape();
    if (s.n != 1) throw DimensionError(std::string(who) + ": batch axis must be 1, got " + std::to_string(s.n));
    if (s.c != 1) throw DimensionError(std::string(who) + ": channel axis must be 1, got " + std::to_string(s.c));
}

} // namespace

Tensor reflect_image(const Tensor& img, const SymmetryLine& line) {
    require_single_plane(img, "reflect_image");
    const Shape& s = img.shape();
    Tensor out(s);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            const Point src = line.reflect({static_cast<double>(x), static_cast<double>(y)});
            out.at(0, 0, y, x) = static_cast<float>(sample_bilinear(img, src.x, src.y));
        }
    }
    return out;
}

Point Roi::to_roi(Point p) const {
    return {(p.x - x0) / (x1 - x0) * (out_w - 1), (p.y - y0) / (y1 - y0) * (out_h - 1)};
}

Point Roi::to_image(Point p) const {
    return {x0 + p.x / (out_w - 1) * (x1 - x0), y0 + p.y / (out_h - 1) * (y1 - y0)};
}

Roi make_roi(const LandmarkSet& lm, double margin_frac, int image_h, int image_w, int out_h, int out_w) {
    if (out_h < 2 || out_w < 2) throw ContractError("make_roi: output size must be at least 2x2");
    double lo_x = std::numeric_limits<double>::infinity();
    double lo_y = lo_x;
    double hi_x = -lo_x;
    double hi_y = -lo_x;
    int flagged = 0;
    const auto& schema = landmark_schema();
    for (int i = 0; i < kLandmarkCount; ++i) {
        if (!schema[static_cast<std::size_t>(i)].on_pubis_ischium) continue;
        ++flagged;
        lo_x = std::min(lo_x, lm[i].x);
        lo_y = std::min(lo_y, lm[i].y);
        hi_x = std::max(hi_x, lm[i].x);
        hi_y = std::max(hi_y, lm[i].y);
    }
    if (flagged == 0) throw GeometryError("make_roi: no pubis/ischium landmarks to bound");
    const double mx = margin_frac * (hi_x - lo_x);
    const double my = margin_frac * (hi_y - lo_y);
    Roi roi;
    roi.x0 = std::max(0.0, lo_x - mx);
    roi.y0 = std::max(0.0, lo_y - my);
    roi.x1 = std::min(static_cast<double>(image_w - 1), hi_x + mx);
    roi.y1 = std::min(static_cast<double>(image_h - 1), hi_y + my);
    roi.out_h = out_h;
    roi.out_w = out_w;
    if (!(roi.x1 > roi.x0) || !(roi.y1 > roi.y0)) {
        throw GeometryError("make_roi: pubis/ischium bounding box is degenerate");
    }
    return roi;
}

Tensor resample_roi(const Tensor& img, const Roi& roi) {
    require_single_plane(img, "resample_roi");
    Tensor out({1, 1, roi.out_h, roi.out_w});
    for (int y = 0; y < roi.out_h; ++y) {
        for (int x = 0; x < roi.out_w; ++x) {
            const Point p = roi.to_image({static_cast<double>(x), static_cast<double>(y)});
            out.at(0, 0, y, x) = static_cast<float>(sample_bilinear(img, p.x, p.y));
        }
    }
    return out;
}

RoiExtraction extract_roi(const Tensor& img, const LandmarkSet& lm, double margin_frac, int out_h, int out_w) {
    const Shape& s = img.shape();
    RoiExtraction result;
    result.roi = make_roi(lm, margin_frac, s.h, s.w, out_h, out_w);
    result.image = resample_roi(img, result.roi);
    for (int i = 0; i < kLandmarkCount; ++i) result.landmarks[i] = result.roi.to_roi(lm[i]);
    return result;
}

Point MirrorFrames::to_flipped(Point roi_pt) const {
    return roi_flipped.to_roi(line.reflect(roi.to_image(roi_pt)));
}

Point MirrorFrames::from_flipped(Point flipped_pt) const {
    return roi.to_roi(line.reflect(roi_flipped.to_image(flipped_pt)));
}

Tensor extract_flipped_roi(const Tensor& img, const MirrorFrames& frames) {
    require_single_plane(img, "extract_flipped_roi");
    const Roi& roi = frames.roi_flipped;
    Tensor out({1, 1, roi.out_h, roi.out_w});
    for (int y = 0; y < roi.out_h; ++y) {
        for (int x = 0; x < roi.out_w; ++x) {
            const Point p = frames.line.reflect(roi.to_image({static_cast<double>(x), static_cast<double>(y)}));
            out.at(0, 0, y, x) = static_cast<float>(sample_bilinear(img, p.x, p.y));
        }
    }
    return out;
}

} // namespace aasn::geometry
