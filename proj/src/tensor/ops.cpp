#include "aasn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace aasn {

namespace {

[[noreturn]] void dim_error(const char* op, const std::string& what) {
    throw DimensionError(std::string(op) + ": " + what);
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
    if (a.n != b.n) dim_error(op, "batch axis " + std::to_string(a.n) + " vs " + std::to_string(b.n));
    if (a.c != b.c) dim_error(op, "channel axis " + std::to_string(a.c) + " vs " + std::to_string(b.c));
    if (a.h != b.h) dim_error(op, "height axis " + std::to_string(a.h) + " vs " + std::to_string(b.h));
    if (a.w != b.w) dim_error(op, "width axis " + std::to_string(a.w) + " vs " + std::to_string(b.w));
}

void require_per_channel(const char* op, const char* name, const Shape& p, int channels) {
    if (p.n != 1 || p.h != 1 || p.w != 1 || p.c != channels) {
        dim_error(op, std::string(name) + " must be 1x" + std::to_string(channels) + "x1x1, got " + p.str());
    }
}

// Sums in double over eight interleaved lanes: vectorizes, and the order of
// additions is fixed by the length alone.
constexpr std::size_t kLanes = 8;

template <typename T, typename Term>
double lane_reduce(std::size_t n, Term term) {
    double acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes)
        for (std::size_t j = 0; j < kLanes; ++j) acc[j] += term(i + j);
    for (; i < n; ++i) acc[0] += term(i);
    double total = 0;
    for (double a : acc) total += a;
    return total;
}

template <typename T>
double lane_sum(const T* p, std::size_t n) {
    return lane_reduce<T>(n, [p](std::size_t i) { return static_cast<double>(p[i]); });
}

template <typename T>
double lane_dot(const T* a, const T* b, std::size_t n) {
    return lane_reduce<T>(n, [a, b](std::size_t i) { return static_cast<double>(a[i]) * static_cast<double>(b[i]); });
}

template <typename T>
double lane_sum_sq_dev(const T* p, std::size_t n, double mu) {
    return lane_reduce<T>(n, [p, mu](std::size_t i) {
        const double d = static_cast<double>(p[i]) - mu;
        return d * d;
    });
}

constexpr int kTile = 64;
constexpr int kRows = 4;

// Row-major matrix views: element (r, c) of X lives at X[r * ldx + c].
//
// C = start + A * B with A M x K and B K x N, where start is init[m] per row
// (0 without init) or, with `accumulate`, the existing C. Every output
// element sums k in increasing order, so its value never depends on how rows
// and columns were blocked.
template <typename T>
void gemm(const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc, int M, int K, int N,
          const T* init, bool accumulate) {
    auto start = [&](int m, int j) {
        if (accumulate) return C[static_cast<std::size_t>(m) * ldc + j];
        return init != nullptr ? init[m] : T(0);
    };
    for (int j0 = 0; j0 < N; j0 += kTile) {
        const int tn = std::min(kTile, N - j0);
        int m = 0;
        if (tn == kTile) {
            for (; m + kRows <= M; m += kRows) {
                alignas(64) T acc[kRows][kTile];
                for (int r = 0; r < kRows; ++r)
                    for (int j = 0; j < kTile; ++j) acc[r][j] = start(m + r, j0 + j);
                const T* a0 = A + static_cast<std::size_t>(m) * lda;
                for (int k = 0; k < K; ++k) {
                    const T* brow = B + static_cast<std::size_t>(k) * ldb + j0;
                    for (int r = 0; r < kRows; ++r) {
                        const T a = a0[static_cast<std::size_t>(r) * lda + k];
                        for (int j = 0; j < kTile; ++j) acc[r][j] += a * brow[j];
                    }
                }
                for (int r = 0; r < kRows; ++r)
                    std::memcpy(C + static_cast<std::size_t>(m + r) * ldc + j0, acc[r], sizeof(T) * kTile);
            }
        }
        for (; m < M; ++m) {
            alignas(64) T acc[kTile];
            for (int j = 0; j < tn; ++j) acc[j] = start(m, j0 + j);
            const T* arow = A + static_cast<std::size_t>(m) * lda;
            for (int k = 0; k < K; ++k) {
                const T a = arow[k];
                const T* brow = B + static_cast<std::size_t>(k) * ldb + j0;
                for (int j = 0; j < tn; ++j) acc[j] += a * brow[j];
            }
            std::memcpy(C + static_cast<std::size_t>(m) * ldc + j0, acc, sizeof(T) * tn);
        }
    }
}

// dst (cols x rows, dense) = src^T, src is rows x cols with row stride lds.
template <typename T>
void transpose(const T* src, std::size_t lds, int rows, int cols, T* dst) {
    constexpr int B = 32;
    for (int r0 = 0; r0 < rows; r0 += B)
        for (int c0 = 0; c0 < cols; c0 += B)
            for (int r = r0; r < std::min(rows, r0 + B); ++r)
                for (int c = c0; c < std::min(cols, c0 + B); ++c)
                    dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * lds + c];
}

struct ConvGeom {
    int cin, h, w, k, stride, pad, ho, wo;
    [[nodiscard]] int K() const { return cin * k * k; }
    [[nodiscard]] int P() const { return ho * wo; }
    [[nodiscard]] bool direct() const { return k == 1 && stride == 1 && pad == 0; }
    // Output pixels per im2col block, sized so a block stays cache resident.
    [[nodiscard]] int block() const {
        const int b = std::max(kTile, (65536 / std::max(K(), 1)) / kTile * kTile);
        return std::min(b, P());
    }
};

// Output columns [lo, hi) within [ox_begin, ox_end) whose tap kx reads
// inside the input row.
inline std::pair<int, int> valid_span(const ConvGeom& g, int kx, int ox_begin, int ox_end) {
    // ix = ox * stride - pad + kx must satisfy 0 <= ix < w.
    const int first = g.pad - kx <= 0 ? 0 : (g.pad - kx + g.stride - 1) / g.stride;
    const int last = g.w - 1 + g.pad - kx < 0 ? -1 : (g.w - 1 + g.pad - kx) / g.stride;
    const int lo = std::clamp(first, ox_begin, ox_end);
    const int hi = std::clamp(last + 1, lo, ox_end);
    return {lo, hi};
}

// Columns [p0, p1) of the K x P patch matrix, written densely (row stride p1 - p0).
template <typename T>
void im2col(const T* x, const ConvGeom& g, int p0, int p1, T* col) {
    const std::size_t width = static_cast<std::size_t>(p1 - p0);
    for (int ci = 0; ci < g.cin; ++ci) {
        const T* xc = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                T* row = col + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * width;
                int p = p0;
                while (p < p1) {
                    const int oy = p / g.wo;
                    const int ox_begin = p - oy * g.wo;
                    const int ox_end = std::min(g.wo, ox_begin + (p1 - p));
                    T* out = row + (p - p0) - ox_begin;
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(out + ox_begin, out + ox_end, T(0));
                    } else {
                        const auto [lo, hi] = valid_span(g, kx, ox_begin, ox_end);
                        std::fill(out + ox_begin, out + lo, T(0));
                        const T* xr = xc + static_cast<std::size_t>(iy) * g.w - g.pad + kx;
                        if (g.stride == 1) {
                            std::copy(xr + lo, xr + hi, out + lo);
                        } else {
                            for (int ox = lo; ox < hi; ++ox) out[ox] = xr[ox * g.stride];
                        }
                        std::fill(out + hi, out + ox_end, T(0));
                    }
                    p += ox_end - ox_begin;
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, int p0, int p1, T* dx) {
    const std::size_t width = static_cast<std::size_t>(p1 - p0);
    for (int ci = 0; ci < g.cin; ++ci) {
        T* dc = dx + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
                const T* row = col + (static_cast<std::size_t>(ci) * g.k * g.k + ky * g.k + kx) * width;
                int p = p0;
                while (p < p1) {
                    const int oy = p / g.wo;
                    const int ox_begin = p - oy * g.wo;
                    const int ox_end = std::min(g.wo, ox_begin + (p1 - p));
                    const T* in = row + (p - p0) - ox_begin;
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy >= 0 && iy < g.h) {
                        const auto [lo, hi] = valid_span(g, kx, ox_begin, ox_end);
                        T* dr = dc + static_cast<std::size_t>(iy) * g.w - g.pad + kx;
                        if (g.stride == 1) {
                            for (int ox = lo; ox < hi; ++ox) dr[ox] += in[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) dr[ox * g.stride] += in[ox];
                        }
                    }
                    p += ox_end - ox_begin;
                }
            }
        }
    }
}

// One image: out (cout x P) = w (cout x K) * patches(x), starting from the
// bias, from zero, or (accumulate) from the current out.
template <typename T>
void conv_image(const T* xn, const ConvGeom& g, const T* w, int cout, const T* bias, bool accumulate, T* on,
                std::vector<T>& col) {
    const int K = g.K();
    const int P = g.P();
    const int block = g.block();
    if (!g.direct()) col.resize(static_cast<std::size_t>(K) * block);
    for (int p0 = 0; p0 < P; p0 += block) {
        const int p1 = std::min(P, p0 + block);
        const T* B = xn + p0;
        std::size_t ldb = static_cast<std::size_t>(P);
        if (!g.direct()) {
            im2col(xn, g, p0, p1, col.data());
            B = col.data();
            ldb = static_cast<std::size_t>(p1 - p0);
        }
        gemm(w, static_cast<std::size_t>(K), B, ldb, on + p0, static_cast<std::size_t>(P), cout, K, p1 - p0,
             accumulate ? nullptr : bias, accumulate);
    }
}

// C (M x N) += A (M x L) * B (N x L)^T: every entry is a dot product of two
// contiguous rows, taken over kVec interleaved lanes in a fixed order.
template <typename T>
void gemm_nt_add(const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc, int M, int N,
                 int L) {
    constexpr int kVec = 8;
    constexpr int kBlock = 4;
    const int Lv = L / kVec * kVec;
    auto finish = [&](int m, int n, const T* lanes) {
        T total = 0;
        for (int l = 0; l < kVec; ++l) total += lanes[l];
        const T* a = A + static_cast<std::size_t>(m) * lda;
        const T* b = B + static_cast<std::size_t>(n) * ldb;
        for (int i = Lv; i < L; ++i) total += a[i] * b[i];
        C[static_cast<std::size_t>(m) * ldc + n] += total;
    };
    int m0 = 0;
    for (; m0 + kBlock <= M; m0 += kBlock) {
        int n0 = 0;
        for (; n0 + kBlock <= N; n0 += kBlock) {
            T acc[kBlock][kBlock][kVec] = {};
            for (int i = 0; i < Lv; i += kVec) {
                for (int r = 0; r < kBlock; ++r) {
                    const T* a = A + static_cast<std::size_t>(m0 + r) * lda + i;
                    for (int c = 0; c < kBlock; ++c) {
                        const T* b = B + static_cast<std::size_t>(n0 + c) * ldb + i;
                        for (int l = 0; l < kVec; ++l) acc[r][c][l] += a[l] * b[l];
                    }
                }
            }
            for (int r = 0; r < kBlock; ++r)
                for (int c = 0; c < kBlock; ++c) finish(m0 + r, n0 + c, acc[r][c]);
        }
        for (; n0 < N; ++n0) {
            for (int r = 0; r < kBlock; ++r) {
                T acc[kVec] = {};
                const T* a = A + static_cast<std::size_t>(m0 + r) * lda;
                const T* b = B + static_cast<std::size_t>(n0) * ldb;
                for (int i = 0; i < Lv; i += kVec)
                    for (int l = 0; l < kVec; ++l) acc[l] += a[i + l] * b[i + l];
                finish(m0 + r, n0, acc);
            }
        }
    }
    for (; m0 < M; ++m0) {
        for (int n0 = 0; n0 < N; ++n0) {
            T acc[kVec] = {};
            const T* a = A + static_cast<std::size_t>(m0) * lda;
            const T* b = B + static_cast<std::size_t>(n0) * ldb;
            for (int i = 0; i < Lv; i += kVec)
                for (int l = 0; l < kVec; ++l) acc[l] += a[i + l] * b[i + l];
            finish(m0, n0, acc);
        }
    }
}

template <typename T>
BasicTensor<T> conv_impl(const char* op, const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                         int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    if (ws.h != ws.w) dim_error(op, "kernel must be square, got " + ws.str());
    if (ws.c != xs.c) {
        dim_error(op, "channel axis: input has " + std::to_string(xs.c) + " channels, weight expects " +
                          std::to_string(ws.c));
    }
    if (stride < 1) throw ContractError(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw ContractError(std::string(op) + ": pad must be >= 0");
    if (b.defined()) require_per_channel(op, "bias", b.shape(), ws.n);

    ConvGeom g{xs.c, xs.h, xs.w, ws.h, stride, pad, 0, 0};
    if (xs.h + 2 * pad < g.k) dim_error(op, "height axis smaller than kernel");
    if (xs.w + 2 * pad < g.k) dim_error(op, "width axis smaller than kernel");
    g.ho = (xs.h + 2 * pad - g.k) / stride + 1;
    g.wo = (xs.w + 2 * pad - g.k) / stride + 1;

    const int cout = ws.n;
    const int P = g.P();
    const std::size_t xstride = static_cast<std::size_t>(xs.c) * xs.h * xs.w;
    BasicTensor<T> out({xs.n, cout, g.ho, g.wo});
    std::vector<T> col;
    const T* bias = b.defined() ? b.ptr() : nullptr;
    for (int n = 0; n < xs.n; ++n) {
        conv_image(x.ptr() + n * xstride, g, w.ptr(), cout, bias, false, out.ptr() + static_cast<std::size_t>(n) * cout * P,
                   col);
    }

    if (BasicTape<T>* tape = recording_tape<T>({&x, &w, &b})) {
        tape->record(op, {x, w, b}, out, [x, w, b, out, g, cout, xstride]() mutable {
            const int K = g.K();
            const int P = g.P();
            const int k = g.k;
            const int block = g.block();
            const int batch = x.shape().n;
            const bool need_w = w.requires_grad();
            const bool need_x = x.requires_grad();
            // With stride 1 the input gradient is a stride-1 convolution of
            // the output gradient with the flipped, transposed kernel.
            const bool transposed = need_x && g.stride == 1 && !g.direct();
            const ConvGeom gt{cout, g.ho, g.wo, k, 1, k - 1 - g.pad, g.h, g.w};
            const T* gout = out.grad().data();
            std::vector<T> col(need_w && !g.direct() ? static_cast<std::size_t>(K) * block : 0);
            std::vector<T> dcol(need_x && !transposed && !g.direct() ? static_cast<std::size_t>(K) * block : 0);
            std::vector<T> tcol;
            std::vector<T> wt;
            if (transposed) {
                wt.resize(static_cast<std::size_t>(g.cin) * cout * k * k);
                for (int co = 0; co < cout; ++co)
                    for (int ci = 0; ci < g.cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx)
                                wt[((static_cast<std::size_t>(ci) * cout + co) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                                    w.ptr()[((static_cast<std::size_t>(co) * g.cin + ci) * k + ky) * k + kx];
            } else if (need_x) {
                wt.resize(static_cast<std::size_t>(K) * cout);
                transpose(w.ptr(), static_cast<std::size_t>(K), cout, K, wt.data());
            }
            T* dw = need_w ? w.grad().data() : nullptr;
            T* dx_all = need_x ? x.grad().data() : nullptr;
            for (int n = 0; n < batch; ++n) {
                const T* gn = gout + static_cast<std::size_t>(n) * cout * P;
                const T* xn = x.ptr() + n * xstride;
                if (b.defined() && b.requires_grad()) {
                    T* db = b.grad().data();
                    for (int co = 0; co < cout; ++co) {
                        db[co] += static_cast<T>(lane_sum(gn + static_cast<std::size_t>(co) * P, static_cast<std::size_t>(P)));
                    }
                }
                if (transposed) conv_image(gn, gt, wt.data(), g.cin, static_cast<const T*>(nullptr), true, dx_all + n * xstride, tcol);
                for (int p0 = 0; p0 < P; p0 += block) {
                    const int p1 = std::min(P, p0 + block);
                    const int width = p1 - p0;
                    if (need_w) {
                        const T* B = xn + p0;
                        std::size_t ldb = static_cast<std::size_t>(P);
                        if (!g.direct()) {
                            im2col(xn, g, p0, p1, col.data());
                            B = col.data();
                            ldb = static_cast<std::size_t>(width);
                        }
                        // dW (cout x K) += gout block (cout x width) * B^T
                        gemm_nt_add(gn + p0, static_cast<std::size_t>(P), B, ldb, dw, static_cast<std::size_t>(K), cout, K,
                                    width);
                    }
                    if (need_x && !transposed) {
                        T* dx = dx_all + n * xstride;
                        if (g.direct()) {
                            gemm(wt.data(), static_cast<std::size_t>(cout), gn + p0, static_cast<std::size_t>(P), dx + p0,
                                 static_cast<std::size_t>(P), K, cout, width, static_cast<const T*>(nullptr), true);
                        } else {
                            gemm(wt.data(), static_cast<std::size_t>(cout), gn + p0, static_cast<std::size_t>(P),
                                 dcol.data(), static_cast<std::size_t>(width), K, cout, width,
                                 static_cast<const T*>(nullptr), false);
                            col2im_add(dcol.data(), g, p0, p1, dx);
                        }
                    }
                }
            }
        });
    }
    return out;
}

} // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b, int stride, int pad) {
    return conv_impl("conv2d", x, w, b, stride, pad);
}

template <typename T>
BasicTensor<T> linear_1x1(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
    if (w.shape().h != 1 || w.shape().w != 1) dim_error("linear_1x1", "weight must be Cout x Cin x 1 x 1");
    return conv_impl("linear_1x1", x, w, b, 1, 0);
}

template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           BasicBatchNormState<T>& state, Mode mode) {
    const Shape xs = x.shape();
    const int C = xs.c;
    require_per_channel("batchnorm2d", "gamma", gamma.shape(), C);
    require_per_channel("batchnorm2d", "beta", beta.shape(), C);
    require_per_channel("batchnorm2d", "running_mean", state.running_mean.shape(), C);
    require_per_channel("batchnorm2d", "running_var", state.running_var.shape(), C);
    if (!(state.eps > 0)) throw ContractError("batchnorm2d: eps must be positive");

    const std::size_t plane = xs.plane();
    const std::size_t count = static_cast<std::size_t>(xs.n) * plane;
    BasicTensor<T> out(xs);
    BasicTensor<T> xhat(xs);
    std::vector<T> inv_std(C);

    for (int c = 0; c < C; ++c) {
        double mu = 0;
        double var = 0;
        if (mode == Mode::train) {
            for (int n = 0; n < xs.n; ++n) mu += lane_sum(x.ptr() + (static_cast<std::size_t>(n) * C + c) * plane, plane);
            mu /= static_cast<double>(count);
            for (int n = 0; n < xs.n; ++n) {
                var += lane_sum_sq_dev(x.ptr() + (static_cast<std::size_t>(n) * C + c) * plane, plane, mu);
            }
            const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : var;
            var /= static_cast<double>(count);
            T& rm = state.running_mean.data()[c];
            T& rv = state.running_var.data()[c];
            rm = static_cast<T>((1.0 - state.momentum) * rm + state.momentum * mu);
            rv = static_cast<T>((1.0 - state.momentum) * rv + state.momentum * unbiased);
        } else {
            mu = state.running_mean.data()[c];
            var = state.running_var.data()[c];
        }
        const double is = 1.0 / std::sqrt(var + state.eps);
        inv_std[static_cast<std::size_t>(c)] = static_cast<T>(is);
        const T scale_c = static_cast<T>(is);
        const T g = gamma.data()[c];
        const T bt = beta.data()[c];
        const T m = static_cast<T>(mu);
        for (int n = 0; n < xs.n; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            const T* __restrict p = x.ptr() + off;
            T* __restrict xh = xhat.ptr() + off;
            T* __restrict o = out.ptr() + off;
            for (std::size_t i = 0; i < plane; ++i) {
                const T v = (p[i] - m) * scale_c;
                xh[i] = v;
                o[i] = g * v + bt;
            }
        }
    }

    if (BasicTape<T>* tape = recording_tape<T>({&x, &gamma, &beta})) {
        tape->record("batchnorm2d", {x, gamma, beta}, out,
                     [x, gamma, beta, out, xhat, inv_std, mode, C, plane, count]() mutable {
                         const Shape xs = x.shape();
                         const T* __restrict gout = out.grad().data();
                         const T* __restrict xh = xhat.ptr();
                         T* __restrict dx = x.requires_grad() ? x.grad().data() : nullptr;
                         for (int c = 0; c < C; ++c) {
                             double sum_dy = 0;
                             double sum_dy_xhat = 0;
                             for (int n = 0; n < xs.n; ++n) {
                                 const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                                 sum_dy += lane_sum(gout + off, plane);
                                 sum_dy_xhat += lane_dot(gout + off, xh + off, plane);
                             }
                             if (gamma.requires_grad()) gamma.grad()[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy_xhat);
                             if (beta.requires_grad()) beta.grad()[static_cast<std::size_t>(c)] += static_cast<T>(sum_dy);
                             if (dx == nullptr) continue;
                             // dx = is * g * (dy - (sum_dy + xhat * sum_dy_xhat) / count) in train mode.
                             const double g = gamma.data()[c];
                             const double is = inv_std[static_cast<std::size_t>(c)];
                             const bool train = mode == Mode::train;
                             const T a = static_cast<T>(is * g);
                             const T b = train ? static_cast<T>(-is * g * sum_dy_xhat / static_cast<double>(count)) : T(0);
                             const T k = train ? static_cast<T>(-is * g * sum_dy / static_cast<double>(count)) : T(0);
                             for (int n = 0; n < xs.n; ++n) {
                                 const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
                                 for (std::size_t i = 0; i < plane; ++i) {
                                     dx[off + i] += a * gout[off + i] + b * xh[off + i] + k;
                                 }
                             }
                         }
                     });
    }
    return out;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    const T* in = x.ptr();
    T* o = out.ptr();
    const std::size_t count = x.numel();
    for (std::size_t i = 0; i < count; ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
    if (BasicTape<T>* tape = recording_tape<T>({&x})) {
        tape->record("relu", {x}, out, [x, out]() mutable {
            const T* __restrict g = out.grad().data();
            T* __restrict dx = x.grad().data();
            const T* __restrict in = x.ptr();
            const std::size_t n = x.numel();
            for (std::size_t i = 0; i < n; ++i) dx[i] += in[i] > T(0) ? g[i] : T(0);
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
    BasicTensor<T> out(x.shape());
    const T* in = x.ptr();
    T* o = out.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const T v = in[i];
        if (v >= T(0)) {
            o[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            o[i] = e / (T(1) + e);
        }
    }
    if (BasicTape<T>* tape = recording_tape<T>({&x})) {
        tape->record("sigmoid", {x}, out, [x, out]() mutable {
            auto g = out.grad();
            auto dx = x.grad();
            const T* y = out.ptr();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * y[i] * (T(1) - y[i]);
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> avgpool2x2(const BasicTensor<T>& x) {
    const Shape s = x.shape();
    if (s.h % 2 != 0) dim_error("avgpool2x2", "height axis must be even, got " + std::to_string(s.h));
    if (s.w % 2 != 0) dim_error("avgpool2x2", "width axis must be even, got " + std::to_string(s.w));
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    BasicTensor<T> out(os);
    const int planes = s.n * s.c;
    for (int p = 0; p < planes; ++p) {
        const T* in = x.ptr() + static_cast<std::size_t>(p) * s.h * s.w;
        T* o = out.ptr() + static_cast<std::size_t>(p) * os.h * os.w;
        for (int y = 0; y < os.h; ++y) {
            const T* r0 = in + static_cast<std::size_t>(2 * y) * s.w;
            const T* r1 = r0 + s.w;
            for (int xx = 0; xx < os.w; ++xx)
                o[y * os.w + xx] = T(0.25) * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
        }
    }
    if (BasicTape<T>* tape = recording_tape<T>({&x})) {
        tape->record("avgpool2x2", {x}, out, [x, out, s, os, planes]() mutable {
            auto g = out.grad();
            T* dx = x.grad().data();
            for (int p = 0; p < planes; ++p) {
                T* d = dx + static_cast<std::size_t>(p) * s.h * s.w;
                const T* gp = g.data() + static_cast<std::size_t>(p) * os.h * os.w;
                for (int y = 0; y < os.h; ++y)
                    for (int xx = 0; xx < os.w; ++xx) {
                        const T v = T(0.25) * gp[y * os.w + xx];
                        d[(2 * y) * s.w + 2 * xx] += v;
                        d[(2 * y) * s.w + 2 * xx + 1] += v;
                        d[(2 * y + 1) * s.w + 2 * xx] += v;
                        d[(2 * y + 1) * s.w + 2 * xx + 1] += v;
                    }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x) {
    const Shape s = x.shape();
    if (s.h % 2 != 0) dim_error("maxpool2x2", "height axis must be even, got " + std::to_string(s.h));
    if (s.w % 2 != 0) dim_error("maxpool2x2", "width axis must be even, got " + std::to_string(s.w));
    const Shape os{s.n, s.c, s.h / 2, s.w / 2};
    BasicTensor<T> out(os);
    std::vector<std::size_t> argmax(os.numel());
    const int planes = s.n * s.c;
    for (int p = 0; p < planes; ++p) {
        const std::size_t base = static_cast<std::size_t>(p) * s.h * s.w;
        for (int y = 0; y < os.h; ++y)
            for (int xx = 0; xx < os.w; ++xx) {
                const std::size_t cand[4] = {base + (2 * y) * s.w + 2 * xx, base + (2 * y) * s.w + 2 * xx + 1,
                                             base + (2 * y + 1) * s.w + 2 * xx, base + (2 * y + 1) * s.w + 2 * xx + 1};
                std::size_t best = cand[0];
                for (int k = 1; k < 4; ++k)
                    if (x.ptr()[cand[k]] > x.ptr()[best]) best = cand[k];
                const std::size_t oi = static_cast<std::size_t>(p) * os.h * os.w + y * os.w + xx;
                out.ptr()[oi] = x.ptr()[best];
                argmax[oi] = best;
            }
    }
    if (BasicTape<T>* tape = recording_tape<T>({&x})) {
        tape->record("maxpool2x2", {x}, out, [x, out, argmax = std::move(argmax)]() mutable {
            auto g = out.grad();
            auto dx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
        });
    }
    return out;
}

namespace {

struct Tap {
    int i0, i1;
    double w1;
};

// Half-pixel source position for doubling, clamped to the edge.
std::vector<Tap> upsample_taps(int in, int out) {
    std::vector<Tap> taps(out);
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * 0.5 - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}

} // namespace

template <typename T>
BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>& x) {
    const Shape s = x.shape();
    const Shape os{s.n, s.c, s.h * 2, s.w * 2};
    BasicTensor<T> out(os);
    const auto ty = upsample_taps(s.h, os.h);
    const auto tx = upsample_taps(s.w, os.w);
    const int planes = s.n * s.c;
    for (int p = 0; p < planes; ++p) {
        const T* in = x.ptr() + static_cast<std::size_t>(p) * s.h * s.w;
        T* o = out.ptr() + static_cast<std::size_t>(p) * os.h * os.w;
        for (int y = 0; y < os.h; ++y) {
            const T wy = static_cast<T>(ty[y].w1);
            const T* r0 = in + static_cast<std::size_t>(ty[y].i0) * s.w;
            const T* r1 = in + static_cast<std::size_t>(ty[y].i1) * s.w;
            for (int xx = 0; xx < os.w; ++xx) {
                const T wx = static_cast<T>(tx[xx].w1);
                const T top = r0[tx[xx].i0] * (T(1) - wx) + r0[tx[xx].i1] * wx;
                const T bot = r1[tx[xx].i0] * (T(1) - wx) + r1[tx[xx].i1] * wx;
                o[y * os.w + xx] = top * (T(1) - wy) + bot * wy;
            }
        }
    }
    if (BasicTape<T>* tape = recording_tape<T>({&x})) {
        tape->record("upsample_bilinear2x", {x}, out, [x, out, s, os, ty, tx, planes]() mutable {
            auto g = out.grad();
            T* dx = x.grad().data();
            for (int p = 0; p < planes; ++p) {
                T* d = dx + static_cast<std::size_t>(p) * s.h * s.w;
                const T* gp = g.data() + static_cast<std::size_t>(p) * os.h * os.w;
                for (int y = 0; y < os.h; ++y) {
                    const T wy = static_cast<T>(ty[y].w1);
                    T* r0 = d + static_cast<std::size_t>(ty[y].i0) * s.w;
                    T* r1 = d + static_cast<std::size_t>(ty[y].i1) * s.w;
                    for (int xx = 0; xx < os.w; ++xx) {
                        const T wx = static_cast<T>(tx[xx].w1);
                        const T v = gp[y * os.w + xx];
                        r0[tx[xx].i0] += v * (T(1) - wy) * (T(1) - wx);
                        r0[tx[xx].i1] += v * (T(1) - wy) * wx;
                        r1[tx[xx].i0] += v * wy * (T(1) - wx);
                        r1[tx[xx].i1] += v * wy * wx;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (sa.n != sb.n) dim_error("concat_channels", "batch axis " + std::to_string(sa.n) + " vs " + std::to_string(sb.n));
    if (sa.h != sb.h) dim_error("concat_channels", "height axis " + std::to_string(sa.h) + " vs " + std::to_string(sb.h));
    if (sa.w != sb.w) dim_error("concat_channels", "width axis " + std::to_string(sa.w) + " vs " + std::to_string(sb.w));
    const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
    BasicTensor<T> out(os);
    const std::size_t na = static_cast<std::size_t>(sa.c) * sa.h * sa.w;
    const std::size_t nb = static_cast<std::size_t>(sb.c) * sb.h * sb.w;
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.ptr() + n * na, na, out.ptr() + n * (na + nb));
        std::copy_n(b.ptr() + n * nb, nb, out.ptr() + n * (na + nb) + na);
    }
    if (BasicTape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("concat_channels", {a, b}, out, [a, b, out, na, nb, batch = sa.n]() mutable {
            auto g = out.grad();
            for (int n = 0; n < batch; ++n) {
                const T* gn = g.data() + n * (na + nb);
                if (a.requires_grad()) {
                    T* da = a.grad().data() + n * na;
                    for (std::size_t i = 0; i < na; ++i) da[i] += gn[i];
                }
                if (b.requires_grad()) {
                    T* db = b.grad().data() + n * nb;
                    for (std::size_t i = 0; i < nb; ++i) db[i] += gn[na + i];
                }
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> grid_sample_bilinear(const BasicTensor<T>& x, const BasicTensor<T>& grid) {
    const Shape s = x.shape();
    const Shape gs = grid.shape();
    if (gs.c != 2) dim_error("grid_sample_bilinear", "grid channel axis must be 2, got " + std::to_string(gs.c));
    if (gs.n != s.n) dim_error("grid_sample_bilinear", "batch axis " + std::to_string(s.n) + " vs grid " + std::to_string(gs.n));
    const Shape os{s.n, s.c, gs.h, gs.w};
    const std::size_t opix = os.plane();
    BasicTensor<T> out(os);

    // Per output pixel: four source offsets (-1 when outside) and weights.
    struct Sample {
        long idx[4];
        T wt[4];
    };
    std::vector<Sample> samples(static_cast<std::size_t>(s.n) * opix);
    for (int n = 0; n < s.n; ++n) {
        const T* gu = grid.ptr() + (static_cast<std::size_t>(n) * 2) * opix;
        const T* gv = gu + opix;
        for (std::size_t p = 0; p < opix; ++p) {
            const double px = (static_cast<double>(gu[p]) + 1.0) * 0.5 * (s.w - 1);
            const double py = (static_cast<double>(gv[p]) + 1.0) * 0.5 * (s.h - 1);
            const double fx = std::floor(px);
            const double fy = std::floor(py);
            const double ax = px - fx;
            const double ay = py - fy;
            const long x0 = static_cast<long>(fx);
            const long y0 = static_cast<long>(fy);
            Sample& smp = samples[n * opix + p];
            const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
            const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
            for (int k = 0; k < 4; ++k) {
                const bool inside = xs[k] >= 0 && xs[k] < s.w && ys[k] >= 0 && ys[k] < s.h && ws[k] != 0.0;
                smp.idx[k] = inside ? ys[k] * s.w + xs[k] : -1;
                smp.wt[k] = inside ? static_cast<T>(ws[k]) : T(0);
            }
        }
    }
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* in = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
            T* o = out.ptr() + (static_cast<std::size_t>(n) * s.c + c) * opix;
            for (std::size_t p = 0; p < opix; ++p) {
                const Sample& smp = samples[n * opix + p];
                T v = 0;
                for (int k = 0; k < 4; ++k)
                    if (smp.idx[k] >= 0) v += smp.wt[k] * in[smp.idx[k]];
                o[p] = v;
            }
        }
    if (BasicTape<T>* tape = recording_tape<T>({&x})) {
        tape->record("grid_sample_bilinear", {x, grid}, out, [x, out, s, opix, samples = std::move(samples)]() mutable {
            auto g = out.grad();
            T* dx = x.grad().data();
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    T* d = dx + (static_cast<std::size_t>(n) * s.c + c) * s.plane();
                    const T* gp = g.data() + (static_cast<std::size_t>(n) * s.c + c) * opix;
                    for (std::size_t p = 0; p < opix; ++p) {
                        const Sample& smp = samples[n * opix + p];
                        for (int k = 0; k < 4; ++k)
                            if (smp.idx[k] >= 0) d[smp.idx[k]] += smp.wt[k] * gp[p];
                    }
                }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape("add", a.shape(), b.shape());
    BasicTensor<T> out(a.shape());
    {
        const T* __restrict pa = a.ptr();
        const T* __restrict pb = b.ptr();
        T* __restrict po = out.ptr();
        const std::size_t count = out.numel();
        for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] + pb[i];
    }
    if (BasicTape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("add", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto d = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape("sub", a.shape(), b.shape());
    BasicTensor<T> out(a.shape());
    {
        const T* __restrict pa = a.ptr();
        const T* __restrict pb = b.ptr();
        T* __restrict po = out.ptr();
        const std::size_t count = out.numel();
        for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] - pb[i];
    }
    if (BasicTape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("sub", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto d = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape("mul", a.shape(), b.shape());
    BasicTensor<T> out(a.shape());
    {
        const T* __restrict pa = a.ptr();
        const T* __restrict pb = b.ptr();
        T* __restrict po = out.ptr();
        const std::size_t count = out.numel();
        for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] * pb[i];
    }
    if (BasicTape<T>* tape = recording_tape<T>({&a, &b})) {
        tape->record("mul", {a, b}, out, [a, b, out]() mutable {
            auto g = out.grad();
            // Read both inputs before accumulating: a and b may alias.
            std::vector<T> ga(g.size());
            std::vector<T> gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] = g[i] * b.ptr()[i];
                gb[i] = g[i] * a.ptr()[i];
            }
            if (a.requires_grad()) {
                auto d = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += ga[i];
            }
            if (b.requires_grad()) {
                auto d = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) d[i] += gb[i];
            }
        });
    }
    return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
    BasicTensor<T> out(a.shape());
    const T f = static_cast<T>(factor);
    {
        const T* __restrict pa = a.ptr();
        T* __restrict po = out.ptr();
        const std::size_t count = out.numel();
        for (std::size_t i = 0; i < count; ++i) po[i] = pa[i] * f;
    }
    if (BasicTape<T>* tape = recording_tape<T>({&a})) {
        tape->record("scale", {a}, out, [a, out, f]() mutable {
            auto g = out.grad();
            auto d = a.grad();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * f;
        });
    }
    return out;
}

namespace {

template <typename T>
BasicTensor<T> reduce(const char* op, const BasicTensor<T>& a, double factor) {
    double acc = 0;
    for (T v : a.data()) acc += v;
    BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(acc * factor));
    if (BasicTape<T>* tape = recording_tape<T>({&a})) {
        tape->record(op, {a}, out, [a, out, factor]() mutable {
            const T g = static_cast<T>(out.grad()[0] * factor);
            for (T& d : a.grad()) d += g;
        });
    }
    return out;
}

} // namespace

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    return reduce("sum", a, 1.0);
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    return reduce("mean", a, 1.0 / static_cast<double>(a.numel()));
}

template <typename T>
BasicTensor<T> identity_grid(int n, int h, int w) {
    BasicTensor<T> grid({n, 2, h, w});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                grid.at(b, 0, y, x) = w > 1 ? static_cast<T>(-1.0 + 2.0 * x / (w - 1)) : T(0);
                grid.at(b, 1, y, x) = h > 1 ? static_cast<T>(-1.0 + 2.0 * y / (h - 1)) : T(0);
            }
    return grid;
}

template <typename T>
BasicTensor<T> stack_batch(std::span<const BasicTensor<T>> items) {
    if (items.empty()) throw ContractError("stack_batch: no items");
    const Shape s0 = items.front().shape();
    if (s0.n != 1) dim_error("stack_batch", "items must have batch size 1, got " + s0.str());
    BasicTensor<T> out({static_cast<int>(items.size()), s0.c, s0.h, s0.w});
    const std::size_t per = s0.numel();
    for (std::size_t i = 0; i < items.size(); ++i) {
        require_same_shape("stack_batch", items[i].shape(), s0);
        std::copy_n(items[i].ptr(), per, out.ptr() + i * per);
    }
    return out;
}

template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, int index) {
    const Shape s = x.shape();
    if (index < 0 || index >= s.n) throw ContractError("slice_batch: index out of range");
    const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
    std::vector<T> v(x.ptr() + index * per, x.ptr() + (index + 1) * per);
    return BasicTensor<T>({1, s.c, s.h, s.w}, std::move(v));
}

#define AASN_INSTANTIATE_OPS(T)                                                                                        \
    template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, int, int);    \
    template BasicTensor<T> linear_1x1(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);          \
    template BasicTensor<T> batchnorm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        BasicBatchNormState<T>&, Mode);                                                \
    template BasicTensor<T> relu(const BasicTensor<T>&);                                                               \
    template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                                            \
    template BasicTensor<T> avgpool2x2(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> maxpool2x2(const BasicTensor<T>&);                                                         \
    template BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>&);                                                \
    template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);                             \
    template BasicTensor<T> grid_sample_bilinear(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                         \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                         \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                         \
    template BasicTensor<T> scale(const BasicTensor<T>&, double);                                                      \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                                \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                               \
    template BasicTensor<T> identity_grid(int, int, int);                                                              \
    template BasicTensor<T> stack_batch(std::span<const BasicTensor<T>>);                                              \
    template BasicTensor<T> slice_batch(const BasicTensor<T>&, int);

AASN_INSTANTIATE_OPS(float)
AASN_INSTANTIATE_OPS(double)

#undef AASN_INSTANTIATE_OPS

} // namespace aasn
