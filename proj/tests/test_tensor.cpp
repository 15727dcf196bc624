#include <cmath>
#include <cstring>
#include <random>

#include "aasn/checkpoint.hpp"
#include "aasn/ops.hpp"
#include "aasn/optim.hpp"
#include "doctest.h"

using namespace aasn;

namespace {

template <typename T = float>
BasicTensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    BasicTensor<T> t(s);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

// Straight nested loops, no im2col.
Tensor64 conv_reference(const Tensor64& x, const Tensor64& w, const Tensor64& b, int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    Tensor64 out({xs.n, ws.n, oh, ow});
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ws.n; ++co)
            for (int y = 0; y < oh; ++y)
                for (int xo = 0; xo < ow; ++xo) {
                    double acc = b.defined() ? b.at(0, co, 0, 0) : 0.0;
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int ky = 0; ky < ws.h; ++ky)
                            for (int kx = 0; kx < ws.w; ++kx) {
                                const int iy = y * stride - pad + ky;
                                const int ix = xo * stride - pad + kx;
                                if (iy < 0 || ix < 0 || iy >= xs.h || ix >= xs.w) continue;
                                acc += x.at(n, ci, iy, ix) * w.at(co, ci, ky, kx);
                            }
                    out.at(n, co, y, xo) = acc;
                }
    return out;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

} // namespace

TEST_CASE("conv2d: all-ones 3x3 sums to nine") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.f);
    Tensor b = Tensor::zeros({1, 1, 1, 1});
    Tensor y = conv2d(x, w, b, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.f);
}

TEST_CASE("conv2d: 1x1 kernel scales and shifts") {
    Tensor x({1, 1, 2, 2}, {1, 0, 0, 1});
    Tensor w = Tensor::full({1, 1, 1, 1}, 2.f);
    Tensor b = Tensor::full({1, 1, 1, 1}, 1.f);
    Tensor y = conv2d(x, w, b, 1, 0);
    CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{3, 1, 1, 3});
}

TEST_CASE("conv2d agrees with nested loops") {
    std::mt19937_64 rng(11);
    struct Case {
        Shape x;
        Shape w;
        int stride, pad;
        bool bias;
    };
    const Case cases[] = {{{2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1, true},
                          {{1, 2, 7, 5}, {3, 2, 3, 3}, 2, 1, false},
                          {{2, 5, 6, 6}, {2, 5, 1, 1}, 1, 0, true},
                          {{1, 1, 9, 9}, {2, 1, 5, 5}, 3, 2, true}};
    for (const Case& c : cases) {
        Tensor x = random_tensor(c.x, rng);
        Tensor w = random_tensor(c.w, rng);
        Tensor b = c.bias ? random_tensor({1, c.w.n, 1, 1}, rng) : Tensor();
        Tensor y = conv2d(x, w, b, c.stride, c.pad);
        Tensor64 ref = conv_reference(x.cast<double>(), w.cast<double>(), c.bias ? b.cast<double>() : Tensor64(),
                                      c.stride, c.pad);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - ref.data()[i]) < 1e-5);
    }
}

TEST_CASE("conv2d: mismatched input channels name the axis") {
    Tensor x({1, 2, 4, 4});
    Tensor w({1, 3, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), 1, 0), doctest::Contains("channel"), DimensionError);
}

TEST_CASE("batchnorm: normalized input passes through in train mode") {
    // Per channel: values +-1 with mean 0 and biased variance 1.
    Tensor x({2, 2, 2, 2});
    for (std::size_t i = 0; i < x.numel(); ++i) x.data()[i] = (i % 2 == 0) ? 1.f : -1.f;
    auto state = BatchNormState::make(2);
    Tensor y = batchnorm2d(x, Tensor::full({1, 2, 1, 1}, 1.f), Tensor::zeros({1, 2, 1, 1}), state, Mode::train);
    CHECK(max_abs_diff(x.data(), y.data()) < 1e-4);
    // Running stats move by momentum 0.1 towards the batch mean (0) and the
    // unbiased variance 8/7.
    CHECK(state.running_mean.data()[0] == doctest::Approx(0.0));
    CHECK(state.running_var.data()[0] == doctest::Approx(0.9 + 0.1 * 8.0 / 7.0).epsilon(1e-6));
}

TEST_CASE("batchnorm: zero gamma gives beta") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor beta({1, 3, 1, 1}, {0.5f, -1.f, 2.f});
    for (Mode mode : {Mode::train, Mode::eval}) {
        auto state = BatchNormState::make(3);
        Tensor y = batchnorm2d(x, Tensor::zeros({1, 3, 1, 1}), beta, state, mode);
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 4; ++j) CHECK(y.at(n, c, i, j) == beta.at(0, c, 0, 0));
    }
}

TEST_CASE("batchnorm: gamma with the wrong channel count") {
    Tensor x({1, 3, 2, 2});
    auto state = BatchNormState::make(3);
    CHECK_THROWS_AS(batchnorm2d(x, Tensor({1, 2, 1, 1}), Tensor({1, 3, 1, 1}), state, Mode::train), DimensionError);
}

TEST_CASE("elementwise ops and shapes") {
    CHECK(sigmoid(Tensor::scalar(0.f)).item() == 0.5f);
    CHECK(sigmoid(Tensor::scalar(-200.f)).item() >= 0.f);
    CHECK(sigmoid(Tensor::scalar(200.f)).item() == 1.f);
    Tensor a({1, 8, 2, 2});
    Tensor b({1, 8, 2, 2});
    CHECK(concat_channels(a, b).shape() == Shape{1, 16, 2, 2});
    CHECK_THROWS_AS(concat_channels(a, Tensor({1, 8, 2, 3})), DimensionError);
    CHECK_THROWS_AS(avgpool2x2(Tensor({1, 1, 3, 4})), DimensionError);
    CHECK(relu(Tensor({1, 1, 1, 2}, {-1.f, 2.f})).data()[0] == 0.f);
}

TEST_CASE("upsample uses half-pixel centres with clamped edges") {
    Tensor x({1, 1, 1, 2}, {0.f, 1.f});
    Tensor y = upsample_bilinear2x(x);
    REQUIRE(y.shape() == Shape{1, 1, 2, 4});
    const std::vector<float> row{0.f, 0.25f, 0.75f, 1.f};
    for (int j = 0; j < 4; ++j) {
        CHECK(y.at(0, 0, 0, j) == doctest::Approx(row[j]));
        CHECK(y.at(0, 0, 1, j) == doctest::Approx(row[j]));
    }
}

TEST_CASE("maxpool routes ties to the first index") {
    Tape tape;
    TapeScope scope(tape);
    Tensor x({1, 1, 2, 2}, {5.f, 5.f, 5.f, 5.f});
    x.set_requires_grad();
    backward(sum(maxpool2x2(x)));
    CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1, 0, 0, 0});
}

TEST_CASE("grid sample: identity, midpoint and bad grids") {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({2, 3, 5, 7}, rng);
    Tensor grid = stack_batch<float>(std::vector<Tensor>{identity_grid<float>(1, 5, 7), identity_grid<float>(1, 5, 7)});
    Tensor y = grid_sample_bilinear(x, grid);
    CHECK(max_abs_diff(x.data(), y.data()) < 1e-6);

    Tensor pair({1, 1, 1, 2}, {0.f, 1.f});
    Tensor mid({1, 2, 1, 1}, {0.f, -1.f});
    CHECK(grid_sample_bilinear(pair, mid).item() == doctest::Approx(0.5));

    Tensor outside({1, 2, 1, 1}, {3.f, 0.f});
    CHECK(grid_sample_bilinear(x, stack_batch<float>(std::vector<Tensor>{outside, outside})).data()[0] == 0.f);
    CHECK_THROWS_AS(grid_sample_bilinear(x, Tensor({2, 3, 5, 7})), DimensionError);
}

TEST_CASE("backward: linear and quadratic anchors") {
    Tape tape;
    TapeScope scope(tape);
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    x.set_requires_grad();
    backward(sum(x));
    for (float g : x.grad()) CHECK(g == 1.f);

    tape.clear();
    x.zero_grad();
    backward(scale(sum(mul(x, x)), 0.5));
    CHECK(max_abs_diff(x.grad(), x.data()) < 1e-6);
}

TEST_CASE("backward: repeated calls accumulate and non-scalar loss throws") {
    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::full({1, 1, 2, 2}, 3.f);
    x.set_requires_grad();
    Tensor loss = sum(x);
    backward(loss);
    backward(loss);
    for (float g : x.grad()) CHECK(g == 2.f);
    CHECK_THROWS_AS(backward(relu(x)), ContractError);
}

TEST_CASE("backward is linear in the loss") {
    std::mt19937_64 rng(21);
    Tensor x = random_tensor({2, 2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor r = random_tensor({2, 3, 4, 4}, rng);
    auto loss_a = [&] { return sum(mul(relu(conv2d(x, w, Tensor(), 1, 1)), r)); };
    auto loss_b = [&] { return mean(mul(sigmoid(x), sigmoid(x))); };
    w.set_requires_grad();
    x.set_requires_grad();

    std::vector<float> separate_w(w.numel(), 0.f), separate_x(x.numel(), 0.f);
    for (int part = 0; part < 2; ++part) {
        Tape tape;
        TapeScope scope(tape);
        w.zero_grad();
        x.zero_grad();
        backward(part == 0 ? loss_a() : loss_b());
        for (std::size_t i = 0; i < w.numel(); ++i) separate_w[i] += w.grad()[i];
        for (std::size_t i = 0; i < x.numel(); ++i) separate_x[i] += x.grad()[i];
    }
    Tape tape;
    TapeScope scope(tape);
    w.zero_grad();
    x.zero_grad();
    backward(add(loss_a(), loss_b()));
    CHECK(max_abs_diff(w.grad(), separate_w) < 1e-5);
    CHECK(max_abs_diff(x.grad(), separate_x) < 1e-5);
}

TEST_CASE("composite graph gradient matches central differences (64-bit)") {
    std::mt19937_64 rng(8);
    Tensor64 x = random_tensor<double>({2, 2, 4, 4}, rng);
    Tensor64 w = random_tensor<double>({3, 2, 3, 3}, rng);
    Tensor64 gamma = random_tensor<double>({1, 3, 1, 1}, rng, 0.5, 1.5);
    Tensor64 beta = random_tensor<double>({1, 3, 1, 1}, rng);
    Tensor64 proj = random_tensor<double>({2, 3, 2, 2}, rng);
    auto loss = [&] {
        auto state = BasicBatchNormState<double>::make(3);
        auto h = batchnorm2d(conv2d(x, w, Tensor64(), 1, 1), gamma, beta, state, Mode::train);
        return sum(mul(avgpool2x2(relu(h)), proj));
    };
    w.set_requires_grad();
    {
        BasicTape<double> tape;
        BasicTapeScope<double> scope(tape);
        backward(loss());
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const double keep = w.data()[i];
        const double h = 1e-6;
        w.data()[i] = keep + h;
        const double up = loss().item();
        w.data()[i] = keep - h;
        const double down = loss().item();
        w.data()[i] = keep;
        const double fd = (up - down) / (2 * h);
        num += (fd - w.grad()[i]) * (fd - w.grad()[i]);
        den = std::max({den, fd * fd, w.grad()[i] * w.grad()[i]});
    }
    CHECK(std::sqrt(num / den) < 1e-6);
}

TEST_CASE("adam: anchors") {
    SUBCASE("zero gradient leaves parameters alone") {
        NamedTensors<float> params{{"w", Tensor({1, 1, 1, 3}, {1.f, -2.f, 3.f})}};
        params[0].second.set_requires_grad();
        params[0].second.grad();
        AdamState state;
        adam_step(params, state, {});
        CHECK(std::vector<float>(params[0].second.data().begin(), params[0].second.data().end()) ==
              std::vector<float>{1.f, -2.f, 3.f});
    }
    SUBCASE("one step on w^2 descends") {
        NamedTensors<float> params{{"w", Tensor::scalar(1.f)}};
        params[0].second.grad()[0] = 2.f;
        AdamState state;
        adam_step(params, state, {.lr = 0.1});
        CHECK(params[0].second.item() < 1.f);
        CHECK(params[0].second.item() == doctest::Approx(0.9).epsilon(1e-6));
    }
    SUBCASE("missing gradient") {
        NamedTensors<float> params{{"w", Tensor::scalar(1.f)}};
        AdamState state;
        CHECK_THROWS_AS(adam_step(params, state, {}), ContractError);
    }
    SUBCASE("200 steps on a 2-D quadratic") {
        // f(a, b) = (a - 1)^2 + 2 (b + 0.5)^2
        NamedTensors<double> params{{"p", Tensor64({1, 1, 1, 2}, {3.0, 2.0})}};
        AdamState state;
        auto grad = [](std::span<const double> p) {
            return std::array<double, 2>{2 * (p[0] - 1), 4 * (p[1] + 0.5)};
        };
        for (int step = 0; step < 200; ++step) {
            auto g = grad(params[0].second.data());
            params[0].second.grad()[0] = g[0];
            params[0].second.grad()[1] = g[1];
            adam_step(params, state, {.lr = 0.05});
        }
        auto g = grad(params[0].second.data());
        CHECK(std::hypot(g[0], g[1]) < 1e-3);
    }
}

TEST_CASE("checkpoint archives round-trip and reject damage") {
    std::mt19937_64 rng(2);
    TensorArchive archive{"model=tiny\n", {{"a", random_tensor({1, 2, 3, 4}, rng)}, {"b.c", Tensor::scalar(7.f)}}};
    const std::string bytes = encode_archive(archive);
    CHECK(bytes.substr(0, 4) == "AASN");
    TensorArchive back = decode_archive(bytes);
    CHECK(back.header == archive.header);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].first == "a");
    CHECK(back.entries[0].second.shape() == archive.entries[0].second.shape());
    CHECK(std::memcmp(back.entries[0].second.ptr(), archive.entries[0].second.ptr(), 24 * sizeof(float)) == 0);

    CHECK_THROWS_AS((void)decode_archive(bytes.substr(0, bytes.size() - 3)), LoadError);
    CHECK_THROWS_AS((void)decode_archive(bytes + "x"), LoadError);
    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS((void)decode_archive(wrong_magic), LoadError);
    std::string wrong_version = bytes;
    wrong_version[4] = 9;
    CHECK_THROWS_WITH_AS((void)decode_archive(wrong_version), doctest::Contains("version"), LoadError);
}

TEST_CASE("tensor invariants") {
    Tensor t({2, 3, 4, 5});
    CHECK(t.data().size() == t.shape().numel());
    CHECK(t.grad().size() == t.data().size());
    Tensor alias = t;
    alias.data()[0] = 4.f;
    CHECK(t.data()[0] == 4.f);
    Tensor copy = t.clone();
    copy.data()[0] = 1.f;
    CHECK(t.data()[0] == 4.f);
    CHECK_THROWS_AS(Tensor({1, 1, 2, 2}, std::vector<float>(3)), DimensionError);
}
