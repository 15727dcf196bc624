#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "aasn/geometry.hpp"
#include "aasn/tensor.hpp"

namespace aasn::losses {

using geometry::Point;

// Centre points of fracture sites in ROI pixels, dilated to discs of
// `radius_px` for supervision.
struct FractureAnnotations {
    std::vector<Point> points;
    double radius_px = 12;
};

// Dilation radius for a desk-scale ROI: 50 px at a 256 px tall ROI, scaled
// linearly and rounded.
[[nodiscard]] int scaled_dilation_radius(int roi_h);

// Binary mask, 1 x 1 x hw/stride. A cell is 1 iff its centre (i * stride +
// (stride - 1) / 2 in ROI pixels) is within radius_px of an annotation point.
// Throws ContractError unless stride divides both dims.
[[nodiscard]] Tensor make_mask(const FractureAnnotations& ann, int roi_h, int roi_w, int stride);

// Union of `mask` with its mirrored, warped copy, max-pooled to
// feature_stride. `mask` is 1 x 1 x (roi / mask_stride) and `warp` maps the
// original ROI frame into the flipped ROI frame; frames.from_flipped takes a
// flipped-ROI point back to where that anatomy sits in the original ROI.
[[nodiscard]] Tensor make_contrast_mask(const Tensor& mask, int mask_stride, const geometry::TpsWarp& warp,
                                        const geometry::MirrorFrames& frames, int feature_stride);

// Mean binary cross-entropy between sigmoid(logits) and the target mask,
// evaluated in the overflow-free logit form. Differentiable in logits.
template <typename T>
[[nodiscard]] BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& target);

// Mean BCE on probabilities (clamped away from 0 and 1). Not differentiable;
// used for reporting and as a reference.
[[nodiscard]] double bce_loss(const Tensor& prob, const Tensor& target);

enum class Reduction { mean, sum };

template <typename T>
using Projection = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

// Pixel-wise margin loss between two feature maps (N x C x H x W) under a
// mask (N x 1 x H x W). With d = |g(a) - g(b)|^2 per pixel: d outside the
// mask, max(0, margin - d) inside. The hinge counts as inactive when
// d == margin. An empty projection means g = identity.
template <typename T>
[[nodiscard]] BasicTensor<T> contrastive_loss(const BasicTensor<T>& a, const BasicTensor<T>& b,
                                              const BasicTensor<T>& mask, double margin,
                                              const Projection<T>& projection = {},
                                              Reduction reduction = Reduction::mean);

// L_b + weight * L_c.
template <typename T>
[[nodiscard]] BasicTensor<T> total_loss(const BasicTensor<T>& bce, const BasicTensor<T>& contrastive, double weight);

// "x y" per line in ROI pixels; '#' comments; an empty file is valid.
[[nodiscard]] std::vector<Point> parse_annotations(std::istream& in);
[[nodiscard]] std::vector<Point> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<Point>& points);

} // namespace aasn::losses
