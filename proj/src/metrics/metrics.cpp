#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "aasn/metrics.hpp"

namespace aasn::metrics {

namespace {

void require_pairs(std::span<const double> scores, std::span<const int> labels, const char* op) {
    if (scores.size() != labels.size()) {
        throw ContractError(std::string(op) + ": " + std::to_string(scores.size()) + " scores but " +
                            std::to_string(labels.size()) + " labels");
    }
}

// Indices sorted by descending score.
std::vector<std::size_t> descending(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

} // namespace

double image_score(const Tensor& heatmap) {
    if (!heatmap.defined() || heatmap.numel() == 0) throw ContractError("image_score: empty heatmap");
    return *std::max_element(heatmap.data().begin(), heatmap.data().end());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
    require_pairs(scores, labels, "auc");
    // Rank-sum form: sort once, give tied groups their average rank.
    const std::vector<std::size_t> order = descending(scores);
    double pos = 0;
    double neg = 0;
    for (int l : labels) (l != 0 ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw MetricError("auc: both classes must be present");
    double wins = 0;  // pairs (pos, neg) with pos ranked above neg, ties as 1/2
    double neg_below = neg;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double group_pos = 0;
        double group_neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] != 0 ? group_pos : group_neg) += 1;
            ++j;
        }
        neg_below -= group_neg;
        wins += group_pos * (neg_below + 0.5 * group_neg);
        i = j;
    }
    return wins / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    require_pairs(scores, labels, "average_precision");
    const double total_pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
    if (total_pos == 0) throw MetricError("average_precision: no positive samples");
    const std::vector<std::size_t> order = descending(scores);
    double ap = 0;
    double tp = 0;
    double seen = 0;
    double prev_recall = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] != 0) tp += 1;
            seen += 1;
            ++j;
        }
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
        i = j;
    }
    return ap;
}

Point EvalRecord::cell_centre(int row, int col) const {
    const double offset = 0.5 * (stride - 1);
    return {col * stride + offset, row * stride + offset};
}

std::vector<unsigned char> EvalRecord::negative_region() const {
    const Shape& s = heatmap.shape();
    std::vector<unsigned char> region(s.plane(), 1);
    const double r2 = ambiguity_radius * ambiguity_radius;
    for (int i = 0; i < s.h; ++i) {
        for (int j = 0; j < s.w; ++j) {
            const Point c = cell_centre(i, j);
            for (const Point& p : points) {
                if ((c.x - p.x) * (c.x - p.x) + (c.y - p.y) * (c.y - p.y) <= r2) {
                    region[static_cast<std::size_t>(i) * s.w + j] = 0;
                    break;
                }
            }
        }
    }
    return region;
}

double EvalRecord::value_at(Point p) const {
    const Shape& s = heatmap.shape();
    const double offset = 0.5 * (stride - 1);
    const int col = std::clamp(static_cast<int>(std::lround((p.x - offset) / stride)), 0, s.w - 1);
    const int row = std::clamp(static_cast<int>(std::lround((p.y - offset) / stride)), 0, s.h - 1);
    return heatmap.at(0, 0, row, col);
}

FrocCurve modified_froc(std::span<const EvalRecord> records, std::span<const double> thresholds) {
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        if (!(thresholds[i] < thresholds[i - 1])) throw ContractError("modified_froc: thresholds must be strictly descending");
    }
    FrocCurve curve;
    curve.thresholds.assign(thresholds.begin(), thresholds.end());
    curve.recall.assign(thresholds.size(), 0.0);
    curve.fp_ratio.assign(thresholds.size(), 0.0);

    // Hit counts per threshold via sorted values, so the cost is
    // O(values log values) per image instead of O(values x thresholds).
    auto count_at_least = [&](std::vector<double>& values, std::vector<double>& counts) {
        std::sort(values.begin(), values.end(), std::greater<>());
        std::size_t k = 0;
        for (std::size_t t = 0; t < thresholds.size(); ++t) {
            while (k < values.size() && values[k] >= thresholds[t]) ++k;
            counts[t] += static_cast<double>(k);
        }
    };

    std::vector<double> hits(thresholds.size(), 0.0);
    std::vector<double> fp_sum(thresholds.size(), 0.0);
    int counted_images = 0;
    for (const EvalRecord& r : records) {
        const Shape& s = r.heatmap.shape();
        if (s.n != 1 || s.c != 1) throw DimensionError("modified_froc: heatmaps must be 1x1xHxW, got " + s.str());
        std::vector<double> point_values;
        for (const Point& p : r.points) point_values.push_back(r.value_at(p));
        curve.total_points += static_cast<int>(r.points.size());
        count_at_least(point_values, hits);

        const std::vector<unsigned char> region = r.negative_region();
        std::vector<double> negatives;
        for (std::size_t i = 0; i < region.size(); ++i) {
            if (region[i] != 0) negatives.push_back(r.heatmap.ptr()[i]);
        }
        if (negatives.empty()) {
            ++curve.excluded_images;
            continue;
        }
        const double n_neg = static_cast<double>(negatives.size());
        std::vector<double> fp(thresholds.size(), 0.0);
        count_at_least(negatives, fp);
        for (std::size_t t = 0; t < thresholds.size(); ++t) fp_sum[t] += fp[t] / n_neg;
        ++counted_images;
    }
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        curve.recall[t] = curve.total_points > 0 ? hits[t] / curve.total_points : 0.0;
        curve.fp_ratio[t] = counted_images > 0 ? fp_sum[t] / counted_images : 0.0;
    }
    return curve;
}

std::vector<double> sweep_thresholds(std::span<const EvalRecord> records, std::size_t max_count) {
    std::vector<double> values;
    for (const EvalRecord& r : records) {
        for (float v : r.heatmap.data()) values.push_back(v);
    }
    std::sort(values.begin(), values.end(), std::greater<>());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    if (values.size() <= max_count || max_count < 2) return values;
    std::vector<double> picked;
    for (std::size_t i = 0; i < max_count; ++i) {
        const std::size_t idx = i * (values.size() - 1) / (max_count - 1);
        if (picked.empty() || values[idx] < picked.back()) picked.push_back(values[idx]);
    }
    return picked;
}

double recall_at_fp(const FrocCurve& curve, double fp) {
    double fp_lo = 0;
    double rec_lo = 0;
    for (std::size_t t = 0; t < curve.thresholds.size(); ++t) {
        const double f = curve.fp_ratio[t];
        const double r = curve.recall[t];
        if (f <= fp) {
            fp_lo = f;
            rec_lo = std::max(rec_lo, r);
            continue;
        }
        // First point beyond the target: interpolate from the last one below.
        return rec_lo + (r - rec_lo) * (fp - fp_lo) / (f - fp_lo);
    }
    return rec_lo;
}

Summary summarize(std::span<const EvalRecord> records, FrocCurve* curve_out) {
    std::vector<double> scores;
    std::vector<int> labels;
    Summary s;
    for (const EvalRecord& r : records) {
        scores.push_back(image_score(r.heatmap));
        labels.push_back(r.label());
        s.positives += r.label();
    }
    s.images = static_cast<int>(records.size());
    s.auc = auc(scores, labels);
    s.ap = average_precision(scores, labels);
    const std::vector<double> thresholds = sweep_thresholds(records);
    FrocCurve curve = modified_froc(records, thresholds);
    s.recall_fp1 = recall_at_fp(curve, 0.01);
    s.recall_fp10 = recall_at_fp(curve, 0.10);
    s.excluded_images = curve.excluded_images;
    if (curve_out != nullptr) *curve_out = std::move(curve);
    return s;
}

void write_summary(std::ostream& out, const Summary& s) {
    out << std::setprecision(17) << "# images " << s.images << ", positives " << s.positives
        << ", excluded from FROC " << s.excluded_images << '\n'
        << "metric\tvalue\n"
        << "auc\t" << s.auc << '\n'
        << "ap\t" << s.ap << '\n'
        << "recall_fp1\t" << s.recall_fp1 << '\n'
        << "recall_fp10\t" << s.recall_fp10 << '\n';
}

void write_froc(std::ostream& out, const FrocCurve& curve) {
    out << std::setprecision(9) << "threshold\trecall\tfp_ratio\n";
    for (std::size_t t = 0; t < curve.thresholds.size(); ++t) {
        out << curve.thresholds[t] << '\t' << curve.recall[t] << '\t' << curve.fp_ratio[t] << '\n';
    }
}

} // namespace aasn::metrics
