#include <algorithm>
#include <cmath>
#include <optional>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>

#include "aasn/gradcheck.hpp"
#include "aasn/losses.hpp"
#include "aasn/model.hpp"
#include "aasn/ops.hpp"

namespace aasn::gradcheck {

namespace {

constexpr double kStep = 1e-6;
constexpr double kSmoothness = 1e-5;

using Rng = std::mt19937_64;

// Values that survive a round trip through float, so the 32-bit and 64-bit
// evaluations start from the same point.
Tensor64 random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor64 t(shape);
    for (double& v : t.data()) v = static_cast<float>(dist(rng));
    return t;
}

Tensor64 random_mask(Rng& rng, Shape shape) {
    std::bernoulli_distribution coin(0.4);
    Tensor64 t(shape);
    for (double& v : t.data()) v = coin(rng) ? 1.0 : 0.0;
    return t;
}

template <typename T>
BasicTensor<T> as(const Tensor64& t) {
    return t.defined() ? t.cast<T>() : BasicTensor<T>();
}

// Fixed, shape-independent weights that turn any output into a scalar with
// a non-trivial gradient.
template <typename T>
BasicTensor<T> weigh(const BasicTensor<T>& out) {
    if (out.numel() == 1) return out;
    BasicTensor<T> w(out.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) w.ptr()[i] = static_cast<T>(std::sin(1.7 * static_cast<double>(i) + 0.3));
    return sum(mul(out, w));
}

// Scalar function of `inputs`, evaluated at either precision.
struct Case {
    std::vector<Tensor64> inputs;
    std::function<Tensor64(const std::vector<Tensor64>&)> f64;
    std::function<Tensor(const std::vector<Tensor>&)> f32;
};

template <typename F>
Case make_case(std::vector<Tensor64> inputs, F f) {
    return {std::move(inputs), [f](const std::vector<Tensor64>& v) { return weigh(f(v)); },
            [f](const std::vector<Tensor>& v) { return weigh(f(v)); }};
}

template <typename T>
using Inputs = std::vector<BasicTensor<T>>;

double norm(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double relative_error(std::span<const double> analytic, std::span<const double> reference) {
    std::vector<double> diff(analytic.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - reference[i];
    return norm(diff) / std::max({norm(reference), norm(analytic), 1e-12});
}

template <typename T>
std::vector<double> flat_grads(const std::vector<BasicTensor<T>>& tensors) {
    std::vector<double> out;
    for (const auto& t : tensors) {
        for (T g : t.grad()) out.push_back(static_cast<double>(g));
    }
    return out;
}

template <typename T>
std::vector<double> analytic(const Case& c) {
    std::vector<BasicTensor<T>> in;
    for (const Tensor64& t : c.inputs) in.push_back(as<T>(t).set_requires_grad());
    BasicTape<T> tape;
    BasicTapeScope<T> scope(tape);
    BasicTensor<T> loss;
    if constexpr (std::is_same_v<T, double>) loss = c.f64(in);
    else loss = c.f32(in);
    tape.backward(loss);
    return flat_grads(in);
}

// Central differences at kStep. A second pass at a quarter of the step
// exposes coordinates whose stencil straddles a kink (ReLU, max pooling, the
// hinge): there the two estimates disagree far beyond truncation error and
// the instance is reported as non-smooth instead of being scored.
template <typename Eval>
std::optional<std::vector<double>> central_differences(std::span<double* const> coords, Eval&& eval) {
    std::vector<double> out;
    for (double* v : coords) {
        const double saved = *v;
        double estimate[2];
        for (int pass = 0; pass < 2; ++pass) {
            const double h = pass == 0 ? kStep : kStep / 4;
            *v = saved + h;
            const double up = eval();
            *v = saved - h;
            const double down = eval();
            estimate[pass] = (up - down) / (2 * h);
        }
        *v = saved;
        if (std::abs(estimate[0] - estimate[1]) > kSmoothness * std::max(1.0, std::abs(estimate[1]))) return std::nullopt;
        out.push_back(estimate[1]);
    }
    return out;
}

std::optional<std::pair<double, double>> check(const Case& c) {
    std::vector<Tensor64> in;
    for (const Tensor64& t : c.inputs) in.push_back(t.clone());
    std::vector<double*> coords;
    for (Tensor64& t : in)
        for (double& v : t.data()) coords.push_back(&v);
    const auto reference = central_differences(coords, [&] { return c.f64(in).item(); });
    if (!reference) return std::nullopt;
    return std::pair{relative_error(analytic<double>(c), *reference), relative_error(analytic<float>(c), *reference)};
}

Shape random_shape(Rng& rng, int max_c = 3) {
    std::uniform_int_distribution<int> n(1, 2), ch(1, max_c), hw(2, 5);
    return {n(rng), ch(rng), 2 * hw(rng), 2 * hw(rng)};
}

// ---------------------------------------------------------------------------
// Per-op instance builders

Case conv_case(Rng& rng) {
    std::uniform_int_distribution<int> ch(1, 3), size(4, 7), coin(0, 1);
    const int cin = ch(rng), cout = ch(rng);
    const int k = coin(rng) ? 3 : 1;
    const int stride = coin(rng) ? 2 : 1;
    const int pad = k == 3 ? coin(rng) : 0;
    const bool bias = coin(rng);
    std::vector<Tensor64> in{random_tensor(rng, {ch(rng) == 1 ? 1 : 2, cin, size(rng), size(rng)}),
                             random_tensor(rng, {cout, cin, k, k})};
    if (bias) in.push_back(random_tensor(rng, {1, cout, 1, 1}));
    return make_case(in, [stride, pad](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        return conv2d(v[0], v[1], v.size() > 2 ? v[2] : BasicTensor<T>(), stride, pad);
    });
}

Case linear_case(Rng& rng) {
    std::uniform_int_distribution<int> ch(1, 4), coin(0, 1);
    const Shape x = random_shape(rng, 4);
    const int cout = ch(rng);
    std::vector<Tensor64> in{random_tensor(rng, x), random_tensor(rng, {cout, x.c, 1, 1})};
    if (coin(rng)) in.push_back(random_tensor(rng, {1, cout, 1, 1}));
    return make_case(in, [](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        return linear_1x1(v[0], v[1], v.size() > 2 ? v[2] : BasicTensor<T>());
    });
}

Case batchnorm_case(Rng& rng) {
    const Shape x = random_shape(rng);
    std::vector<Tensor64> in{random_tensor(rng, x, -2, 2), random_tensor(rng, {1, x.c, 1, 1}, 0.5, 1.5),
                             random_tensor(rng, {1, x.c, 1, 1})};
    return make_case(in, [c = x.c](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        auto state = BasicBatchNormState<T>::make(c);
        return batchnorm2d(v[0], v[1], v[2], state, Mode::train);
    });
}

template <typename Op>
Case unary_case(Rng& rng, Op op, double lo = -2, double hi = 2) {
    return make_case({random_tensor(rng, random_shape(rng), lo, hi)}, op);
}

template <typename Op>
Case binary_case(Rng& rng, Op op) {
    const Shape s = random_shape(rng);
    return make_case({random_tensor(rng, s), random_tensor(rng, s)}, op);
}

Case concat_case(Rng& rng) {
    Shape a = random_shape(rng);
    Shape b = a;
    b.c = std::uniform_int_distribution<int>(1, 3)(rng);
    return make_case({random_tensor(rng, a), random_tensor(rng, b)},
                     [](const auto& v) { return concat_channels(v[0], v[1]); });
}

Case grid_sample_case(Rng& rng) {
    const Shape x = random_shape(rng);
    std::uniform_int_distribution<int> size(2, 6);
    const Tensor64 grid = random_tensor(rng, {x.n, 2, size(rng), size(rng)}, -1.2, 1.2);
    return make_case({random_tensor(rng, x)}, [grid](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        return grid_sample_bilinear(v[0], as<T>(grid));
    });
}

Case bce_case(Rng& rng) {
    const Shape s{std::uniform_int_distribution<int>(1, 2)(rng), 1, 4, 6};
    const bool soft = std::bernoulli_distribution(0.5)(rng);
    const Tensor64 target = soft ? random_tensor(rng, s, 0, 1) : random_mask(rng, s);
    return make_case({random_tensor(rng, s, -6, 6)}, [target](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        return losses::bce_with_logits(v[0], as<T>(target));
    });
}

Case contrastive_case(Rng& rng, int instance) {
    const Shape s = random_shape(rng);
    const Tensor64 mask = random_mask(rng, {s.n, 1, s.h, s.w});
    const bool project = instance % 2 == 1;
    const auto reduction = instance % 4 < 2 ? losses::Reduction::mean : losses::Reduction::sum;
    std::vector<Tensor64> in{random_tensor(rng, s, -0.6, 0.6), random_tensor(rng, s, -0.6, 0.6)};
    if (project) in.push_back(random_tensor(rng, {3, s.c, 1, 1}));
    return make_case(in, [mask, reduction](const auto& v) {
        using T = typename std::decay_t<decltype(v[0])>::value_type;
        losses::Projection<T> g;
        if (v.size() > 2) {
            const BasicTensor<T> w = v[2];
            g = [w](const BasicTensor<T>& x) { return linear_1x1(x, w, BasicTensor<T>()); };
        }
        return losses::contrastive_loss(v[0], v[1], as<T>(mask), 0.5, g, reduction);
    });
}

Case total_loss_case(Rng& rng) {
    return make_case({random_tensor(rng, {1, 1, 1, 1}), random_tensor(rng, {1, 1, 1, 1})},
                     [](const auto& v) { return losses::total_loss(v[0], v[1], 0.5); });
}

// ---------------------------------------------------------------------------
// End-to-end: toy network, every parameter, the full training loss.

model::ModelConfig toy_config() {
    model::ModelConfig c;
    c.base_channels = 2;
    c.blocks_before_split = 2;
    c.blocks_after_split = 1;
    c.input_h = 16;
    c.input_w = 32;
    c.output_stride = 4;
    return c;
}

struct ToyInputs {
    Tensor64 image, flipped, grid, mask, contrast_mask;
};

template <typename T>
BasicTensor<T> toy_loss(model::BasicAasnModel<T>& net, const ToyInputs& in) {
    const BasicTensor<T> grid = as<T>(in.grid);
    auto out = net.forward(as<T>(in.image), as<T>(in.flipped), &grid);
    const BasicTensor<T> bce = losses::bce_with_logits(out.logits, as<T>(in.mask));
    losses::Projection<T> g = [&net](const BasicTensor<T>& x) { return net.project(x); };
    const BasicTensor<T> cl = losses::contrastive_loss(out.features, out.flipped_aligned, as<T>(in.contrast_mask), 0.5, g);
    return losses::total_loss(bce, cl, 0.5);
}

std::optional<std::pair<double, double>> check_end_to_end(Rng& rng, std::uint64_t seed) {
    const model::ModelConfig cfg = toy_config();
    model::BasicAasnModel<float> net32(cfg, seed);
    model::BasicAasnModel<double> net64(cfg, seed);
    auto p32 = net32.parameters();
    auto p64 = net64.parameters();
    for (std::size_t i = 0; i < p32.size(); ++i) {
        for (std::size_t k = 0; k < p32[i].second.numel(); ++k) p64[i].second.ptr()[k] = p32[i].second.ptr()[k];
    }
    const int n = 2;
    const int fh = cfg.input_h / cfg.feature_stride(), fw = cfg.input_w / cfg.feature_stride();
    ToyInputs in{random_tensor(rng, {n, 1, cfg.input_h, cfg.input_w}, 0, 1),
                 random_tensor(rng, {n, 1, cfg.input_h, cfg.input_w}, 0, 1), identity_grid<double>(n, fh, fw),
                 random_mask(rng, {n, 1, cfg.output_h(), cfg.output_w()}), random_mask(rng, {n, 1, fh, fw})};
    const Tensor64 jitter = random_tensor(rng, in.grid.shape(), -0.1, 0.1);
    for (std::size_t k = 0; k < in.grid.numel(); ++k) in.grid.ptr()[k] += jitter.ptr()[k];

    std::vector<double*> coords;
    for (auto& [name, t] : p64)
        for (double& v : t.data()) coords.push_back(&v);
    const auto reference = central_differences(coords, [&] { return toy_loss(net64, in).item(); });
    if (!reference) return std::nullopt;
    auto grads = [&](auto& net, auto& params) {
        using T = typename std::decay_t<decltype(params[0].second)>::value_type;
        zero_grads(params);
        BasicTape<T> tape;
        BasicTapeScope<T> scope(tape);
        tape.backward(toy_loss(net, in));
        std::vector<BasicTensor<T>> tensors;
        for (auto& [name, t] : params) tensors.push_back(t);
        return flat_grads(tensors);
    };
    return std::pair{relative_error(grads(net64, p64), *reference), relative_error(grads(net32, p32), *reference)};
}

using Builder = std::function<Case(Rng&, int)>;

const std::vector<std::pair<std::string, Builder>>& registry() {
    static const std::vector<std::pair<std::string, Builder>> table = {
        {"conv2d", [](Rng& r, int) { return conv_case(r); }},
        {"linear_1x1", [](Rng& r, int) { return linear_case(r); }},
        {"batchnorm2d", [](Rng& r, int) { return batchnorm_case(r); }},
        {"relu", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return relu(v[0]); }); }},
        {"sigmoid", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return sigmoid(v[0]); }, -4, 4); }},
        {"avgpool2x2", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return avgpool2x2(v[0]); }); }},
        {"maxpool2x2", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return maxpool2x2(v[0]); }); }},
        {"upsample_bilinear2x",
         [](Rng& r, int) { return unary_case(r, [](const auto& v) { return upsample_bilinear2x(v[0]); }); }},
        {"concat_channels", [](Rng& r, int) { return concat_case(r); }},
        {"grid_sample_bilinear", [](Rng& r, int) { return grid_sample_case(r); }},
        {"add", [](Rng& r, int) { return binary_case(r, [](const auto& v) { return add(v[0], v[1]); }); }},
        {"sub", [](Rng& r, int) { return binary_case(r, [](const auto& v) { return sub(v[0], v[1]); }); }},
        {"mul", [](Rng& r, int) { return binary_case(r, [](const auto& v) { return mul(v[0], v[1]); }); }},
        {"scale", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return scale(v[0], -1.75); }); }},
        {"sum", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return sum(v[0]); }); }},
        {"mean", [](Rng& r, int) { return unary_case(r, [](const auto& v) { return mean(v[0]); }); }},
        {"bce_with_logits", [](Rng& r, int) { return bce_case(r); }},
        {"contrastive_loss", [](Rng& r, int i) { return contrastive_case(r, i); }},
        {"total_loss", [](Rng& r, int) { return total_loss_case(r); }},
    };
    return table;
}

constexpr std::string_view kEndToEnd = "end_to_end";

} // namespace

std::vector<std::string> registered_ops() {
    std::vector<std::string> out;
    for (const auto& [name, builder] : registry()) out.push_back(name);
    out.emplace_back(kEndToEnd);
    return out;
}

std::vector<Row> run(const Options& options) {
    std::vector<Row> rows;
    auto record = [&](const std::string& name, auto&& one) {
        Rng rng(options.seed * 1000003u + rows.size());
        Row row{name, options.instances, 0, 0, 0, true};
        for (int i = 0; i < options.instances;) {
            const auto errors = one(rng, i + row.redrawn);
            if (!errors) {
                if (++row.redrawn > options.instances) {
                    row.passed = false;
                    break;
                }
                continue;
            }
            ++i;
            const auto [e64, e32] = *errors;
            row.max_error64 = std::max(row.max_error64, std::isnan(e64) ? INFINITY : e64);
            row.max_error32 = std::max(row.max_error32, std::isnan(e32) ? INFINITY : e32);
        }
        row.passed = row.passed && row.max_error64 < options.tolerance64 && row.max_error32 < options.tolerance32;
        rows.push_back(row);
    };
    for (const auto& [name, builder] : registry()) {
        record(name, [&](Rng& rng, int i) { return check(builder(rng, i)); });
    }
    record(std::string(kEndToEnd),
           [&](Rng& rng, int i) { return check_end_to_end(rng, options.seed * 7919u + static_cast<std::uint64_t>(i)); });
    return rows;
}

bool all_passed(const std::vector<Row>& rows) {
    return std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.passed; });
}

void write_table(std::ostream& out, const std::vector<Row>& rows) {
    out << std::left << std::setw(22) << "op" << std::setw(11) << "instances" << std::setw(14) << "max_err64"
        << std::setw(14) << "max_err32" << std::setw(9) << "redrawn" << "result\n";
    for (const Row& r : rows) {
        out << std::left << std::setw(22) << r.op << std::setw(11) << r.instances << std::setw(14) << std::setprecision(3)
            << std::scientific << r.max_error64 << std::setw(14) << r.max_error32 << std::defaultfloat
            << std::setw(9) << r.redrawn << (r.passed ? "PASS" : "FAIL") << '\n';
    }
}

} // namespace aasn::gradcheck
