#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aasn/error.hpp"

namespace aasn {

// N x C x H x W. Every tensor in the library is four dimensional; scalars are
// 1x1x1x1 and per-channel parameters are 1xCx1x1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    [[nodiscard]] std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    [[nodiscard]] std::size_t plane() const noexcept {
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    [[nodiscard]] std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

// Shared-storage handle. Copies alias the same buffer, which is what lets the
// two Siamese streams reference one set of weights and what lets the tape keep
// intermediates alive until backward has run.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T(0));
    BasicTensor(Shape shape, std::vector<T> values);

    static BasicTensor zeros(Shape shape) { return BasicTensor(shape, T(0)); }
    static BasicTensor full(Shape shape, T value) { return BasicTensor(shape, value); }
    static BasicTensor scalar(T value) { return BasicTensor(Shape{}, value); }

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(impl_); }
    [[nodiscard]] const Shape& shape() const { return impl().shape; }
    [[nodiscard]] std::size_t numel() const { return impl().shape.numel(); }

    [[nodiscard]] std::span<T> data() { return impl().data; }
    [[nodiscard]] std::span<const T> data() const { return impl().data; }
    [[nodiscard]] T* ptr() { return impl().data.data(); }
    [[nodiscard]] const T* ptr() const { return impl().data.data(); }

    T& at(int n, int c, int y, int x) { return impl().data[offset(n, c, y, x)]; }
    [[nodiscard]] T at(int n, int c, int y, int x) const { return impl().data[offset(n, c, y, x)]; }
    [[nodiscard]] T item() const;

    [[nodiscard]] bool requires_grad() const { return impl().requires_grad; }
    BasicTensor& set_requires_grad(bool on = true);
    [[nodiscard]] bool is_leaf() const { return impl().is_leaf; }

    [[nodiscard]] bool has_grad() const { return !impl().grad.empty(); }
    // Gradient buffer, allocated and zero-filled on first use. The tensor is
    // a handle, so a const handle still reaches the shared gradient storage.
    std::span<T> grad() const;
    void zero_grad();

    // Deep copy without gradient state.
    [[nodiscard]] BasicTensor clone() const;
    template <typename U>
    [[nodiscard]] BasicTensor<U> cast() const;

    [[nodiscard]] bool same_storage(const BasicTensor& other) const noexcept { return impl_ == other.impl_; }

    // Used by ops when recording onto a tape.
    void mark_interior() { impl().requires_grad = true; impl().is_leaf = false; }

private:
    struct Impl {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
        bool is_leaf = true;
    };

    Impl& impl() const;
    [[nodiscard]] std::size_t offset(int n, int c, int y, int x) const {
        const Shape& s = impl().shape;
        return ((static_cast<std::size_t>(n) * s.c + c) * s.h + y) * s.w + x;
    }

    std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Ordered record of differentiable ops. Ops record themselves onto the tape
// that is active on the calling thread (see TapeScope) whenever one of their
// inputs requires a gradient.
template <typename T>
class BasicTape {
public:
    struct Node {
        std::string op;
        std::vector<BasicTensor<T>> inputs;
        BasicTensor<T> output;
        std::function<void()> backward;
    };

    void record(std::string_view op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and runs every node once in reverse order.
    // Interior gradients are reset first; leaf gradients accumulate across
    // calls until the caller zeroes them.
    void backward(const BasicTensor<T>& loss);

    void clear() { nodes_.clear(); }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const std::vector<Node>& nodes() const noexcept { return nodes_; }

    [[nodiscard]] static BasicTape* current() noexcept;

private:
    template <typename>
    friend class BasicTapeScope;
    static void set_current(BasicTape* tape) noexcept;

    std::vector<Node> nodes_;
};

template <typename T>
class BasicTapeScope {
public:
    explicit BasicTapeScope(BasicTape<T>& tape) : previous_(BasicTape<T>::current()) {
        BasicTape<T>::set_current(&tape);
    }
    ~BasicTapeScope() { BasicTape<T>::set_current(previous_); }
    BasicTapeScope(const BasicTapeScope&) = delete;
    BasicTapeScope& operator=(const BasicTapeScope&) = delete;

private:
    BasicTape<T>* previous_;
};

using Tape = BasicTape<float>;
using TapeScope = BasicTapeScope<float>;
using Tape64 = BasicTape<double>;
using TapeScope64 = BasicTapeScope<double>;

// Convenience: backward on whichever tape is active.
template <typename T>
void backward(const BasicTensor<T>& loss);

namespace testing {
// Scales the upstream gradient entering every backward node whose op name
// matches, so the gradient checker has something to catch. Empty disables.
void inject_backward_fault(std::string op_name);
[[nodiscard]] const std::string& injected_backward_fault();
} // namespace testing

} // namespace aasn
