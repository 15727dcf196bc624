#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "aasn/losses.hpp"
#include "aasn/ops.hpp"

namespace aasn::losses {

// Ties round to even, so a 64 px ROI gets 12.
int scaled_dilation_radius(int roi_h) { return static_cast<int>(std::nearbyint(50.0 * roi_h / 256.0)); }

Tensor make_mask(const FractureAnnotations& ann, int roi_h, int roi_w, int stride) {
    if (stride < 1 || roi_h % stride != 0 || roi_w % stride != 0) {
        throw ContractError("make_mask: stride " + std::to_string(stride) + " does not divide the ROI " +
                            std::to_string(roi_h) + "x" + std::to_string(roi_w));
    }
    const int h = roi_h / stride;
    const int w = roi_w / stride;
    const double offset = 0.5 * (stride - 1);
    const double r2 = ann.radius_px * ann.radius_px;
    Tensor mask({1, 1, h, w});
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const double cx = j * stride + offset;
            const double cy = i * stride + offset;
            for (const Point& p : ann.points) {
                if ((cx - p.x) * (cx - p.x) + (cy - p.y) * (cy - p.y) <= r2) {
                    mask.at(0, 0, i, j) = 1.f;
                    break;
                }
            }
        }
    }
    return mask;
}

Tensor make_contrast_mask(const Tensor& mask, int mask_stride, const geometry::TpsWarp& warp,
                          const geometry::MirrorFrames& frames, int feature_stride) {
    const Shape& s = mask.shape();
    if (s.n != 1 || s.c != 1) throw DimensionError("make_contrast_mask: expected a 1x1xHxW mask, got " + s.str());
    if (feature_stride % mask_stride != 0) {
        throw ContractError("make_contrast_mask: feature stride must be a multiple of the mask stride");
    }
    const double offset = 0.5 * (mask_stride - 1);
    Tensor joined({1, 1, s.h, s.w});
    for (int i = 0; i < s.h; ++i) {
        for (int j = 0; j < s.w; ++j) {
            float v = mask.at(0, 0, i, j) > 0.5f ? 1.f : 0.f;
            if (v == 0.f) {
                // Where the aligned mirror stream looks in the original ROI.
                const Point flipped = warp({j * mask_stride + offset, i * mask_stride + offset});
                const Point source = frames.from_flipped(flipped);
                const double mx = (source.x - offset) / mask_stride;
                const double my = (source.y - offset) / mask_stride;
                if (geometry::sample_bilinear(mask, mx, my) >= 0.5) v = 1.f;
            }
            joined.at(0, 0, i, j) = v;
        }
    }
    Tensor out = joined;
    for (int f = mask_stride; f < feature_stride; f *= 2) out = maxpool2x2(out);
    return out;
}

std::vector<Point> parse_annotations(std::istream& in) {
    std::vector<Point> points;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream fields(line);
        double x = 0;
        double y = 0;
        if (!(fields >> x)) {
            if (fields.eof()) continue;
            throw SchemaError("annotation line " + std::to_string(line_no) + ": expected 'x y'");
        }
        std::string extra;
        if (!(fields >> y) || (fields >> extra)) {
            throw SchemaError("annotation line " + std::to_string(line_no) + ": expected 'x y'");
        }
        points.push_back({x, y});
    }
    return points;
}

std::vector<Point> read_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open annotation file " + path.string());
    return parse_annotations(in);
}

void write_annotations(const std::filesystem::path& path, const std::vector<Point>& points) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "# fracture centres, ROI pixels\n" << std::setprecision(17);
    for (const Point& p : points) out << p.x << ' ' << p.y << '\n';
}

} // namespace aasn::losses
