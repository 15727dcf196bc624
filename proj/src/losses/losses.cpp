#include <algorithm>
#include <cmath>

#include "aasn/losses.hpp"
#include "aasn/ops.hpp"

namespace aasn::losses {

namespace {

void require_same(const char* op, const Shape& a, const Shape& b) {
    if (!(a == b)) throw DimensionError(std::string(op) + ": shape " + a.str() + " vs " + b.str());
}

} // namespace

template <typename T>
BasicTensor<T> bce_with_logits(const BasicTensor<T>& logits, const BasicTensor<T>& target) {
    require_same("bce_with_logits", logits.shape(), target.shape());
    const std::size_t n = logits.numel();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits.ptr()[i];
        const double y = target.ptr()[i];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (BasicTape<T>* tape = recording_tape<T>({&logits})) {
        tape->record("bce_with_logits", {logits, target}, out, [logits, target, out, n]() mutable {
            const double g = out.grad()[0] / static_cast<double>(n);
            auto d = logits.grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double z = logits.ptr()[i];
                const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
                d[i] += static_cast<T>(g * (p - target.ptr()[i]));
            }
        });
    }
    return out;
}

double bce_loss(const Tensor& prob, const Tensor& target) {
    require_same("bce_loss", prob.shape(), target.shape());
    constexpr double eps = 1e-7;
    double acc = 0;
    for (std::size_t i = 0; i < prob.numel(); ++i) {
        const double p = std::clamp(static_cast<double>(prob.ptr()[i]), eps, 1.0 - eps);
        const double y = target.ptr()[i];
        acc -= y * std::log(p) + (1 - y) * std::log(1 - p);
    }
    return acc / static_cast<double>(prob.numel());
}

template <typename T>
BasicTensor<T> contrastive_loss(const BasicTensor<T>& a, const BasicTensor<T>& b, const BasicTensor<T>& mask,
                                double margin, const Projection<T>& projection, Reduction reduction) {
    require_same("contrastive_loss", a.shape(), b.shape());
    const BasicTensor<T> pa = projection ? projection(a) : a;
    const BasicTensor<T> pb = projection ? projection(b) : b;
    require_same("contrastive_loss (projected)", pa.shape(), pb.shape());
    const Shape& s = pa.shape();
    const Shape& ms = mask.shape();
    if (ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
        throw DimensionError("contrastive_loss: mask " + ms.str() + " does not match features " + s.str());
    }
    const std::size_t plane = s.plane();
    const std::size_t pixels = static_cast<std::size_t>(s.n) * plane;
    // Per-pixel derivative of the loss term with respect to d.
    std::vector<T> slope(pixels);
    double acc = 0;
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            double d = 0;
            for (int c = 0; c < s.c; ++c) {
                const std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * plane + p;
                const double diff = static_cast<double>(pa.ptr()[i]) - pb.ptr()[i];
                d += diff * diff;
            }
            const std::size_t k = static_cast<std::size_t>(n) * plane + p;
            if (mask.ptr()[k] > T(0.5)) {
                if (d < margin) {
                    acc += margin - d;
                    slope[k] = T(-1);
                }
            } else {
                acc += d;
                slope[k] = T(1);
            }
        }
    }
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(pixels) : 1.0;
    BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc * norm));
    if (BasicTape<T>* tape = recording_tape<T>({&pa, &pb})) {
        tape->record("contrastive_loss", {pa, pb}, out,
                     [pa, pb, out, s, plane, norm, slope = std::move(slope)]() mutable {
                         const double g = out.grad()[0] * norm;
                         std::vector<T> ga(pa.numel());
                         for (int n = 0; n < s.n; ++n) {
                             for (int c = 0; c < s.c; ++c) {
                                 for (std::size_t p = 0; p < plane; ++p) {
                                     const std::size_t i = (static_cast<std::size_t>(n) * s.c + c) * plane + p;
                                     const T k = slope[static_cast<std::size_t>(n) * plane + p];
                                     ga[i] = static_cast<T>(2.0 * g * k * (static_cast<double>(pa.ptr()[i]) - pb.ptr()[i]));
                                 }
                             }
                         }
                         if (pa.requires_grad()) {
                             auto d = pa.grad();
                             for (std::size_t i = 0; i < ga.size(); ++i) d[i] += ga[i];
                         }
                         if (pb.requires_grad()) {
                             auto d = pb.grad();
                             for (std::size_t i = 0; i < ga.size(); ++i) d[i] -= ga[i];
                         }
                     });
    }
    return out;
}

template <typename T>
BasicTensor<T> total_loss(const BasicTensor<T>& bce, const BasicTensor<T>& contrastive, double weight) {
    return add(bce, scale(contrastive, weight));
}

#define AASN_INSTANTIATE(T)                                                                                      \
    template BasicTensor<T> bce_with_logits<T>(const BasicTensor<T>&, const BasicTensor<T>&);                   \
    template BasicTensor<T> contrastive_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                const BasicTensor<T>&, double, const Projection<T>&, Reduction); \
    template BasicTensor<T> total_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&, double);

AASN_INSTANTIATE(float)
AASN_INSTANTIATE(double)
#undef AASN_INSTANTIATE

} // namespace aasn::losses
