#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "aasn/synth.hpp"

namespace aasn::synth {

namespace {

// Canonical right half of the skeleton (x >= 0, y down, symphysis between
// (0, -12) and (0, 12)); the left half is its mirror image.
struct Arc {
    Point p0, p1, p2;  // quadratic Bezier
    double half_width;

    [[nodiscard]] Point at(double t) const {
        const double u = 1 - t;
        return u * u * p0 + 2 * u * t * p1 + t * t * p2;
    }
    [[nodiscard]] Point tangent(double t) const {
        const Point d = 2 * (1 - t) * (p1 - p0) + 2 * t * (p2 - p1);
        const double n = std::hypot(d.x, d.y);
        return (1.0 / n) * d;
    }
};

enum ArcId { kSuperior = 0, kInferior = 1, kIliac = 2, kArcCount = 3 };

const std::array<Arc, kArcCount>& arcs() {
    static const std::array<Arc, kArcCount> a{{
        {{0, -12}, {34, -28}, {62, -16}, 3.5},
        {{0, 12}, {36, 54}, {62, -16}, 3.5},
        {{24, -30}, {56, -56}, {84, -26}, 4.5},
    }};
    return a;
}

// (arc, parameter) of the right-hand member of each landmark pair.
constexpr std::array<std::pair<ArcId, double>, geometry::kPairCount> kPairSites{{
    {kIliac, 0.5},      // iliac_wing_upper
    {kIliac, 0.9},      // iliac_wing_lower
    {kSuperior, 0.9},   // sup_ramus_lateral
    {kSuperior, 0.1},   // sup_ramus_medial
    {kInferior, 0.1},   // inf_ramus_medial
    {kInferior, 0.55},  // ischial_tuberosity
    {kInferior, 0.9},   // ischial_body
}};

constexpr double kBackground = 0.12;
constexpr double kBoneAmplitude = 0.55;
constexpr double kEdgeSoftness = 0.6;
constexpr int kSegments = 48;

// Transverse dark band across one arc. Centre and tangent are canonical
// (right-hand side coordinates).
struct Notch {
    int arc;
    Point centre;
    Point tangent;
    double sigma;     // along the bone
    double contrast;  // absolute intensity drop at the centre
};

struct SideFields {
    double width_scale = 1;
    double brightness_scale = 1;
    Point blob_centre;
    double blob_sigma = 10;
    double blob_amplitude = 0;
};

struct Polyline {
    std::array<Point, kSegments + 1> pts;
    double lo_x, lo_y, hi_x, hi_y;
};

const std::array<Polyline, kArcCount>& polylines() {
    static const std::array<Polyline, kArcCount> lines = [] {
        std::array<Polyline, kArcCount> out{};
        for (int a = 0; a < kArcCount; ++a) {
            Polyline& pl = out[static_cast<std::size_t>(a)];
            pl.lo_x = pl.lo_y = 1e300;
            pl.hi_x = pl.hi_y = -1e300;
            for (int i = 0; i <= kSegments; ++i) {
                const Point p = arcs()[static_cast<std::size_t>(a)].at(static_cast<double>(i) / kSegments);
                pl.pts[static_cast<std::size_t>(i)] = p;
                pl.lo_x = std::min(pl.lo_x, p.x);
                pl.lo_y = std::min(pl.lo_y, p.y);
                pl.hi_x = std::max(pl.hi_x, p.x);
                pl.hi_y = std::max(pl.hi_y, p.y);
            }
        }
        return out;
    }();
    return lines;
}

double segment_distance(Point p, Point a, Point b) {
    const Point ab = b - a;
    const Point ap = p - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    const double t = std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0);
    const Point d = ap - t * ab;
    return std::hypot(d.x, d.y);
}

// Distance to the arc's centreline, or `cutoff` if clearly farther.
double arc_distance(int arc, Point p, double cutoff) {
    const Polyline& pl = polylines()[static_cast<std::size_t>(arc)];
    if (p.x < pl.lo_x - cutoff || p.x > pl.hi_x + cutoff || p.y < pl.lo_y - cutoff || p.y > pl.hi_y + cutoff) {
        return cutoff;
    }
    double best = cutoff;
    for (int i = 0; i < kSegments; ++i) {
        best = std::min(best, segment_distance(p, pl.pts[static_cast<std::size_t>(i)],
                                               pl.pts[static_cast<std::size_t>(i) + 1]));
    }
    return best;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct Layout {
    Pose pose;
    std::array<SideFields, 2> sides;  // 0: canonical x < 0, 1: x >= 0
    std::vector<Notch> variants;      // drawn on both sides
    std::vector<Notch> lesions;       // drawn on `lesion_side` only
    int lesion_side = 1;
};

Notch make_notch(int arc, double t, double contrast, double width) {
    const Arc& a = arcs()[static_cast<std::size_t>(arc)];
    // Full width at half maximum equals `width`.
    return {arc, a.at(t), a.tangent(t), width / 2.3548, contrast};
}

Layout draw_layout(const PhantomSpec& spec, std::mt19937_64& rng) {
    Layout l;
    const double pm = spec.pose_magnitude;
    const double angle = uniform(rng, -1, 1) * pm * 8.0 * std::numbers::pi / 180.0;
    const double scale = 1 + uniform(rng, -1, 1) * pm * 0.06;
    const double aspect = 1 + uniform(rng, -1, 1) * pm * 0.05;
    const double shear = uniform(rng, -1, 1) * pm * 0.08;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    // R(angle) * [[scale * aspect, shear * scale], [0, scale]]
    const double a00 = scale * aspect;
    const double a01 = shear * scale;
    const double a11 = scale;
    l.pose.linear = {c * a00, c * a01 - s * a11, s * a00, s * a01 + c * a11};
    l.pose.offset = {0.5 * (spec.image_w - 1) + uniform(rng, -1, 1) * pm * 5.0,
                     0.5 * spec.image_h + uniform(rng, -1, 1) * pm * 5.0};

    const double nm = spec.nuisance_magnitude;
    for (SideFields& f : l.sides) {
        f.width_scale = 1 + uniform(rng, -1, 1) * nm * 0.08;
        f.brightness_scale = 1 + uniform(rng, -1, 1) * nm * 0.06;
        f.blob_centre = {uniform(rng, 10, 70), uniform(rng, -30, 30)};
        f.blob_sigma = uniform(rng, 8, 20);
        f.blob_amplitude = uniform(rng, -1, 1) * nm * 0.06;
    }

    // Sites already used on each ring arc, to keep notches apart.
    std::vector<std::pair<int, double>> used;
    auto free_site = [&](int& arc, double& t) {
        for (int attempt = 0; attempt < 100; ++attempt) {
            arc = static_cast<int>(rng() % 2);
            t = uniform(rng, 0.15, 0.85);
            bool ok = true;
            for (const auto& [ua, ut] : used) ok = ok && !(ua == arc && std::abs(ut - t) < 0.1);
            if (ok) {
                used.emplace_back(arc, t);
                return true;
            }
        }
        return false;
    };

    const int n_variants = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_variants + 1));
    for (int v = 0; v < n_variants; ++v) {
        int arc = 0;
        double t = 0;
        const double contrast = spec.lesion_contrast * uniform(rng, 0.9, 1.15);
        const double width = spec.lesion_width_px * uniform(rng, 0.8, 1.2);
        if (free_site(arc, t)) l.variants.push_back(make_notch(arc, t, contrast, width));
    }

    const bool positive = uniform(rng, 0, 1) < spec.lesion_prob;
    l.lesion_side = static_cast<int>(rng() % 2);
    const int n_lesions = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_lesions));
    for (int k = 0; positive && k < n_lesions; ++k) {
        int arc = 0;
        double t = 0;
        const double contrast = spec.lesion_contrast * uniform(rng, 0.9, 1.15);
        const double width = spec.lesion_width_px * uniform(rng, 0.8, 1.2);
        if (free_site(arc, t)) l.lesions.push_back(make_notch(arc, t, contrast, width));
    }
    return l;
}

double notch_drop(const Notch& n, Point q) {
    const Point d = q - n.centre;
    const double along = d.x * n.tangent.x + d.y * n.tangent.y;
    // Restrict to the bone cross-section near the centre.
    const double across = std::abs(d.x * n.tangent.y - d.y * n.tangent.x);
    if (across > 8) return 0;
    return n.contrast * std::exp(-along * along / (2 * n.sigma * n.sigma));
}

// Noise-free intensity at canonical point c.
double render(const Layout& l, Point c) {
    const int side = c.x < 0 ? 0 : 1;
    const Point q{std::abs(c.x), c.y};
    const SideFields& f = l.sides[static_cast<std::size_t>(side)];

    double value = kBackground + 0.10 * std::exp(-(c.x * c.x) / (80.0 * 80.0) - (c.y - 10) * (c.y - 10) / (50.0 * 50.0));
    const Point bd = q - f.blob_centre;
    value += f.blob_amplitude * std::exp(-(bd.x * bd.x + bd.y * bd.y) / (2 * f.blob_sigma * f.blob_sigma));

    double bone = 0;
    for (int a = 0; a < kArcCount; ++a) {
        const double hw = arcs()[static_cast<std::size_t>(a)].half_width * f.width_scale;
        const double d = arc_distance(a, q, hw + 6);
        if (d >= hw + 6) continue;
        const double profile = 1.0 / (1.0 + std::exp((d - hw) / kEdgeSoftness));
        double v = kBoneAmplitude * f.brightness_scale * profile;
        for (const Notch& n : l.variants) {
            if (n.arc == a) v -= notch_drop(n, q) * profile;
        }
        if (side == l.lesion_side) {
            for (const Notch& n : l.lesions) {
                if (n.arc == a) v -= notch_drop(n, q) * profile;
            }
        }
        bone = std::max(bone, v);
    }
    return value + bone;
}

Point mirror_canonical(Point c) { return {-c.x, c.y}; }

} // namespace

void PhantomSpec::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("phantom spec: " + msg); };
    if (image_h < 96 || image_w < 160) fail("image must be at least 96 x 160 to hold the skeleton");
    if (n_images < 1) fail("n_images must be positive");
    if (!(lesion_prob >= 0 && lesion_prob <= 1)) fail("lesion_prob must lie in [0, 1]");
    if (max_lesions < 1) fail("max_lesions must be at least 1");
    if (max_variants < 0) fail("max_variants must be non-negative");
    if (!(pose_magnitude >= 0) || !(nuisance_magnitude >= 0)) fail("magnitudes must be non-negative");
    if (!(lesion_contrast >= 0) || !(lesion_width_px > 0)) fail("lesion contrast/width out of range");
    if (!(noise_sigma >= 0)) fail("noise_sigma must be non-negative");
}

Point Pose::apply(Point c) const {
    return {linear[0] * c.x + linear[1] * c.y + offset.x, linear[2] * c.x + linear[3] * c.y + offset.y};
}

Point Pose::invert(Point p) const {
    const double det = linear[0] * linear[3] - linear[1] * linear[2];
    const Point d = p - offset;
    return {(linear[3] * d.x - linear[1] * d.y) / det, (-linear[2] * d.x + linear[0] * d.y) / det};
}

Point PhantomSample::mirror(Point p) const { return pose.apply(mirror_canonical(pose.invert(p))); }

PhantomSample generate_sample(const PhantomSpec& spec, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    std::mt19937_64 rng(seq);
    const Layout layout = draw_layout(spec, rng);

    PhantomSample s;
    s.seed = spec.seed;
    s.index = index;
    s.pose = layout.pose;
    s.image = Tensor({1, 1, spec.image_h, spec.image_w});
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int y = 0; y < spec.image_h; ++y) {
        for (int x = 0; x < spec.image_w; ++x) {
            const Point c = layout.pose.invert({static_cast<double>(x), static_cast<double>(y)});
            double v = render(layout, c);
            if (spec.noise_sigma > 0) v += spec.noise_sigma * noise(rng);
            s.image.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }

    for (int i = 0; i < geometry::kPairCount; ++i) {
        const auto [arc, t] = kPairSites[static_cast<std::size_t>(i)];
        const Point right = arcs()[static_cast<std::size_t>(arc)].at(t);
        s.landmarks[LandmarkSet::right(i)] = layout.pose.apply(right);
        s.landmarks[LandmarkSet::left(i)] = layout.pose.apply(mirror_canonical(right));
    }
    s.landmarks[geometry::kSymphysisSuperior] = layout.pose.apply(arcs()[kSuperior].p0);
    s.landmarks[geometry::kSymphysisInferior] = layout.pose.apply(arcs()[kInferior].p0);

    for (const Notch& n : layout.lesions) {
        const Point c = layout.lesion_side == 1 ? n.centre : mirror_canonical(n.centre);
        s.lesions.push_back(layout.pose.apply(c));
    }
    return s;
}

std::vector<PhantomSample> generate(const PhantomSpec& spec) {
    spec.validate();
    std::vector<PhantomSample> out;
    out.reserve(static_cast<std::size_t>(spec.n_images));
    for (int i = 0; i < spec.n_images; ++i) out.push_back(generate_sample(spec, i));
    return out;
}

double mirror_window_contrast(const PhantomSample& sample, Point p, double radius) {
    auto window_mean = [&](Point centre) {
        double sum = 0;
        int count = 0;
        const int r = static_cast<int>(std::ceil(radius));
        for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
                if (dx * dx + dy * dy > radius * radius) continue;
                sum += geometry::sample_bilinear(sample.image, centre.x + dx, centre.y + dy);
                ++count;
            }
        }
        return sum / count;
    };
    return window_mean(sample.mirror(p)) - window_mean(p);
}

double mirror_residual(const PhantomSample& sample) {
    const Shape& s = sample.image.shape();
    double sum = 0;
    int count = 0;
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            const Point m = sample.mirror({static_cast<double>(x), static_cast<double>(y)});
            if (m.x < 0 || m.y < 0 || m.x > s.w - 1 || m.y > s.h - 1) continue;
            const double d = sample.image.at(0, 0, y, x) - geometry::sample_bilinear(sample.image, m.x, m.y);
            sum += d * d;
            ++count;
        }
    }
    return count > 0 ? std::sqrt(sum / count) : 0.0;
}

} // namespace aasn::synth
