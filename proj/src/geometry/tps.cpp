#include <cmath>
#include <sstream>

#include "aasn/geometry.hpp"

namespace aasn::geometry {

double tps_kernel(double r) {
    if (r <= 0.0) return 0.0;
    return r * r * std::log(r);
}

namespace {

// Solves A X = B in place (A is n x n row-major, B is n x m) by Gaussian
// elimination with partial pivoting. Returns false on a zero pivot.
bool solve_dense(std::vector<double>& a, std::vector<double>& b, int n, int m) {
    double max_abs = 0;
    for (double v : a) max_abs = std::max(max_abs, std::abs(v));
    const double tiny = 1e-13 * std::max(max_abs, 1.0);
    auto A = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
    auto B = [&](int r, int c) -> double& { return b[static_cast<std::size_t>(r) * m + c]; };
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r) {
            if (std::abs(A(r, col)) > std::abs(A(piv, col))) piv = r;
        }
        if (std::abs(A(piv, col)) <= tiny) return false;
        if (piv != col) {
            for (int c = 0; c < n; ++c) std::swap(A(col, c), A(piv, c));
            for (int c = 0; c < m; ++c) std::swap(B(col, c), B(piv, c));
        }
        for (int r = col + 1; r < n; ++r) {
            const double f = A(r, col) / A(col, col);
            if (f == 0.0) continue;
            for (int c = col; c < n; ++c) A(r, c) -= f * A(col, c);
            for (int c = 0; c < m; ++c) B(r, c) -= f * B(col, c);
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        for (int c = 0; c < m; ++c) {
            double v = B(r, c);
            for (int k = r + 1; k < n; ++k) v -= A(r, k) * B(k, c);
            B(r, c) = v / A(r, r);
        }
    }
    return true;
}

// Ratio of the scatter matrix's small to large eigenvalue; 0 for collinear sets.
double spread_ratio(std::span<const Point> pts) {
    Point c;
    for (const Point& p : pts) c = c + p;
    c = (1.0 / static_cast<double>(pts.size())) * c;
    double sxx = 0, sxy = 0, syy = 0;
    for (const Point& p : pts) {
        const Point d = p - c;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    const double mean = 0.5 * (sxx + syy);
    const double rad = std::hypot(0.5 * (sxx - syy), sxy);
    if (mean + rad <= 0) return 0;
    return (mean - rad) / (mean + rad);
}

} // namespace

TpsWarp TpsWarp::fit(std::span<const Point> src, std::span<const Point> dst, double lambda) {
    if (src.size() != dst.size()) {
        throw ContractError("fit_tps: " + std::to_string(src.size()) + " source points vs " +
                            std::to_string(dst.size()) + " targets");
    }
    if (src.size() < 3) throw ContractError("fit_tps: need at least 3 control points");
    if (!(lambda >= 0)) throw ContractError("fit_tps: regularization must be non-negative");
    if (spread_ratio(src) < 1e-12) throw SingularSystemError("fit_tps: control points are collinear");

    const int k = static_cast<int>(src.size());
    const int n = k + 3;
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> b(static_cast<std::size_t>(n) * 2, 0.0);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            a[static_cast<std::size_t>(i) * n + j] = tps_kernel(distance(src[i], src[j]));
        }
        a[static_cast<std::size_t>(i) * n + i] += lambda;
        const double row[3] = {1.0, src[i].x, src[i].y};
        for (int c = 0; c < 3; ++c) {
            a[static_cast<std::size_t>(i) * n + k + c] = row[c];
            a[static_cast<std::size_t>(k + c) * n + i] = row[c];
        }
        b[static_cast<std::size_t>(i) * 2] = dst[i].x;
        b[static_cast<std::size_t>(i) * 2 + 1] = dst[i].y;
    }
    if (!solve_dense(a, b, n, 2)) throw SingularSystemError("fit_tps: the spline system is singular");

    TpsWarp warp;
    warp.lambda_ = lambda;
    warp.control_.assign(src.begin(), src.end());
    warp.weights_.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) warp.weights_[static_cast<std::size_t>(i)] = {b[i * 2], b[i * 2 + 1]};
    for (int c = 0; c < 3; ++c) {
        warp.affine_[0][static_cast<std::size_t>(c)] = b[(k + c) * 2];
        warp.affine_[1][static_cast<std::size_t>(c)] = b[(k + c) * 2 + 1];
    }
    return warp;
}

TpsWarp TpsWarp::identity() { return TpsWarp{}; }

TpsWarp TpsWarp::from_coefficients(std::vector<Point> control, std::array<std::array<double, 3>, 2> affine,
                                   std::vector<Point> weights, double lambda) {
    if (control.size() != weights.size()) throw ContractError("TpsWarp: control/weight count mismatch");
    TpsWarp warp;
    warp.control_ = std::move(control);
    warp.weights_ = std::move(weights);
    warp.affine_ = affine;
    warp.lambda_ = lambda;
    return warp;
}

Point TpsWarp::operator()(Point p) const {
    Point out{affine_[0][0] + affine_[0][1] * p.x + affine_[0][2] * p.y,
              affine_[1][0] + affine_[1][1] * p.x + affine_[1][2] * p.y};
    for (std::size_t i = 0; i < control_.size(); ++i) {
        const double u = tps_kernel(distance(p, control_[i]));
        out.x += weights_[i].x * u;
        out.y += weights_[i].y * u;
    }
    return out;
}

TpsWarp fit_tps(std::span<const Point> src, std::span<const Point> dst, double lambda) {
    return TpsWarp::fit(src, dst, lambda);
}

template <typename T>
BasicTensor<T> warp_to_grid(const TpsWarp& warp, int feat_h, int feat_w, int roi_h, int roi_w) {
    if (feat_h <= 0 || feat_w <= 0 || roi_h % feat_h != 0 || roi_w % feat_w != 0 ||
        roi_h / feat_h != roi_w / feat_w) {
        std::ostringstream msg;
        msg << "warp_to_grid: ROI " << roi_h << "x" << roi_w << " is not an integer multiple of feature map "
            << feat_h << "x" << feat_w;
        throw ContractError(msg.str());
    }
    const int stride = roi_h / feat_h;
    const double offset = 0.5 * (stride - 1);
    const double sx = feat_w > 1 ? 2.0 / (feat_w - 1) : 0.0;
    const double sy = feat_h > 1 ? 2.0 / (feat_h - 1) : 0.0;
    BasicTensor<T> grid({1, 2, feat_h, feat_w});
    for (int i = 0; i < feat_h; ++i) {
        for (int j = 0; j < feat_w; ++j) {
            const Point q = warp({j * stride + offset, i * stride + offset});
            grid.at(0, 0, i, j) = static_cast<T>(-1.0 + sx * ((q.x - offset) / stride));
            grid.at(0, 1, i, j) = static_cast<T>(-1.0 + sy * ((q.y - offset) / stride));
        }
    }
    return grid;
}

template Tensor warp_to_grid<float>(const TpsWarp&, int, int, int, int);
template Tensor64 warp_to_grid<double>(const TpsWarp&, int, int, int, int);

Tensor warp_image(const Tensor& img, const TpsWarp& warp) {
    const Shape& s = img.shape();
    if (s.n != 1 || s.c != 1) throw DimensionError("warp_image: expected a 1x1xHxW image, got " + s.str());
    Tensor out(s);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            const Point q = warp({static_cast<double>(x), static_cast<double>(y)});
            out.at(0, 0, y, x) = static_cast<float>(sample_bilinear(img, q.x, q.y));
        }
    }
    return out;
}

ControlPairs control_pairs(const LandmarkSet& roi_landmarks, const LandmarkSet& flipped_roi_landmarks) {
    ControlPairs pairs;
    for (int i = 0; i < kLandmarkCount; ++i) {
        pairs.image.push_back(roi_landmarks[i]);
        pairs.flipped.push_back(flipped_roi_landmarks[i]);
    }
    return pairs;
}

PairGeometry build_pair_geometry(const LandmarkSet& lm, int image_h, int image_w, double margin_frac, int out_h,
                                 int out_w, double lambda_tps) {
    PairGeometry g;
    g.frames.line = fit_symmetry_line(lm);
    const LandmarkSet flipped = reflect_landmarks(lm, g.frames.line);
    g.frames.roi = make_roi(lm, margin_frac, image_h, image_w, out_h, out_w);
    g.frames.roi_flipped = make_roi(flipped, margin_frac, image_h, image_w, out_h, out_w);
    for (int i = 0; i < kLandmarkCount; ++i) {
        g.roi_landmarks[i] = g.frames.roi.to_roi(lm[i]);
        g.flipped_roi_landmarks[i] = g.frames.roi_flipped.to_roi(flipped[i]);
    }
    const ControlPairs pairs = control_pairs(g.roi_landmarks, g.flipped_roi_landmarks);
    g.warp = fit_tps(pairs.image, pairs.flipped, lambda_tps);
    return g;
}

} // namespace aasn::geometry
