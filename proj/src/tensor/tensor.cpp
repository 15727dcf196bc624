#include "aasn/tensor.hpp"

#include <algorithm>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace aasn {

namespace {

#if defined(__GLIBC__)
// Training allocates and frees the same multi-megabyte activation buffers on
// every step. By default glibc serves those with fresh mmaps and hands them
// back right away, so every step pays the page faults again; keeping them in
// the heap makes reuse free.
const bool kAllocatorTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
}();
#endif

} // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << n << 'x' << c << 'x' << h << 'x' << w;
    return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
        throw DimensionError("tensor dims must be positive, got " + shape.str());
    }
    impl_->shape = shape;
    impl_->data.assign(shape.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
        throw DimensionError("tensor dims must be positive, got " + shape.str());
    }
    if (values.size() != shape.numel()) {
        throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                             shape.str());
    }
    impl_->shape = shape;
    impl_->data = std::move(values);
}

template <typename T>
typename BasicTensor<T>::Impl& BasicTensor<T>::impl() const {
    if (!impl_) {
        throw ContractError("use of an undefined tensor");
    }
    return *impl_;
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) {
        throw ContractError("item() on a tensor of shape " + shape().str());
    }
    return impl().data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
    impl().requires_grad = on;
    return *this;
}

template <typename T>
std::span<T> BasicTensor<T>::grad() const {
    Impl& s = impl();
    if (s.grad.empty()) {
        s.grad.assign(s.data.size(), T(0));
    }
    return s.grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    Impl& s = impl();
    std::fill(s.grad.begin(), s.grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(shape(), impl().data);
}

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
    std::vector<U> out(numel());
    std::transform(impl().data.begin(), impl().data.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape(), std::move(out));
}

namespace {

std::string& fault_slot() {
    static std::string op;
    return op;
}

template <typename T>
BasicTape<T>*& current_slot() {
    thread_local BasicTape<T>* tape = nullptr;
    return tape;
}

} // namespace

namespace testing {

void inject_backward_fault(std::string op_name) { fault_slot() = std::move(op_name); }

const std::string& injected_backward_fault() { return fault_slot(); }

} // namespace testing

template <typename T>
BasicTape<T>* BasicTape<T>::current() noexcept {
    return current_slot<T>();
}

template <typename T>
void BasicTape<T>::set_current(BasicTape* tape) noexcept {
    current_slot<T>() = tape;
}

template <typename T>
void BasicTape<T>::record(std::string_view op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
                          std::function<void()> backward) {
    output.mark_interior();
    nodes_.push_back(Node{std::string(op), std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void BasicTape<T>::backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got " +
                            (loss.defined() ? loss.shape().str() : std::string("undefined tensor")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward() on a loss that is not connected to any parameter");
    }
    for (Node& node : nodes_) {
        node.output.grad();
        node.output.zero_grad();
    }
    BasicTensor<T> seed = loss;
    seed.grad()[0] += T(1);

    const std::string& fault = testing::injected_backward_fault();
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!fault.empty() && it->op == fault) {
            for (T& g : it->output.grad()) {
                g *= T(1.5);
            }
        }
        it->backward();
    }
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
    BasicTape<T>* tape = BasicTape<T>::current();
    if (tape == nullptr) {
        throw ContractError("backward() called with no active tape");
    }
    tape->backward(loss);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<double> BasicTensor<float>::cast<double>() const;
template BasicTensor<float> BasicTensor<double>::cast<float>() const;
template BasicTensor<float> BasicTensor<float>::cast<float>() const;
template BasicTensor<double> BasicTensor<double>::cast<double>() const;
template class BasicTape<float>;
template class BasicTape<double>;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

} // namespace aasn
