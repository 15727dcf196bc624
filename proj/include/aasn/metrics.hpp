#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aasn/geometry.hpp"
#include "aasn/tensor.hpp"

namespace aasn::metrics {

using geometry::Point;

// Maximum of the heatmap. ContractError on an empty tensor.
[[nodiscard]] double image_score(const Tensor& heatmap);

// Mann-Whitney estimate with half credit for ties. Labels are 0/1; throws
// MetricError unless both classes are present.
[[nodiscard]] double auc(std::span<const double> scores, std::span<const int> labels);

// Step-wise AP over the descending sweep, equal scores entering together.
// MetricError without positives.
[[nodiscard]] double average_precision(std::span<const double> scores, std::span<const int> labels);

// One evaluated ROI.
struct EvalRecord {
    Tensor heatmap;             // 1 x 1 x h x w probabilities
    int stride = 4;             // ROI pixels per heatmap cell
    std::vector<Point> points;  // fracture centres, ROI pixels
    double ambiguity_radius = 12;

    [[nodiscard]] int label() const { return points.empty() ? 0 : 1; }
    [[nodiscard]] Point cell_centre(int row, int col) const;
    // Cells farther than ambiguity_radius from every point; row-major, 0/1.
    [[nodiscard]] std::vector<unsigned char> negative_region() const;
    // Heatmap value at the cell nearest to a point.
    [[nodiscard]] double value_at(Point p) const;
};

struct FrocCurve {
    std::vector<double> thresholds;  // descending
    std::vector<double> recall;
    std::vector<double> fp_ratio;
    int excluded_images = 0;  // images without any negative cell
    int total_points = 0;
};

[[nodiscard]] FrocCurve modified_froc(std::span<const EvalRecord> records, std::span<const double> thresholds);

// Up to max_count descending thresholds taken from the distinct heatmap
// values (evenly spaced in rank), so every step of the curve is reachable.
[[nodiscard]] std::vector<double> sweep_thresholds(std::span<const EvalRecord> records, std::size_t max_count = 2000);

// Recall linearly interpolated at the requested mean FP ratio. The curve is
// anchored at (fp 0, recall 0), the operating point of an infinite threshold.
[[nodiscard]] double recall_at_fp(const FrocCurve& curve, double fp);

struct Summary {
    double auc = 0;
    double ap = 0;
    double recall_fp1 = 0;
    double recall_fp10 = 0;
    int images = 0;
    int positives = 0;
    int excluded_images = 0;
};

[[nodiscard]] Summary summarize(std::span<const EvalRecord> records, FrocCurve* curve_out = nullptr);

// A "# ..." line with the counts, then "metric<TAB>value" rows for exactly
// auc, ap, recall_fp1 and recall_fp10.
void write_summary(std::ostream& out, const Summary& s);
// "threshold<TAB>recall<TAB>fp_ratio" rows with a header line.
void write_froc(std::ostream& out, const FrocCurve& curve);

} // namespace aasn::metrics
