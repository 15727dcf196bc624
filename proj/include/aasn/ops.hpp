#pragma once

#include <initializer_list>
#include <span>
#include <vector>

#include "aasn/tensor.hpp"

namespace aasn {

enum class Mode { train, eval };

// Running statistics of one batch-norm layer. Shapes are 1xCx1x1.
template <typename T>
struct BasicBatchNormState {
    BasicTensor<T> running_mean;
    BasicTensor<T> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BasicBatchNormState make(int channels) {
        return {BasicTensor<T>::zeros({1, channels, 1, 1}), BasicTensor<T>::full({1, channels, 1, 1}, T(1))};
    }
};

using BatchNormState = BasicBatchNormState<float>;

// The active tape if any of the inputs participates in differentiation.
template <typename T>
BasicTape<T>* recording_tape(std::initializer_list<const BasicTensor<T>*> inputs) {
    BasicTape<T>* tape = BasicTape<T>::current();
    if (tape == nullptr) {
        return nullptr;
    }
    for (const BasicTensor<T>* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) {
            return tape;
        }
    }
    return nullptr;
}

// w: Cout x Cin x k x k. b may be undefined (no bias) or 1 x Cout x 1 x 1.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b, int stride = 1,
                      int pad = 0);

// Per-pixel linear map. w: Cout x Cin x 1 x 1.
template <typename T>
BasicTensor<T> linear_1x1(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

// gamma, beta: 1 x C x 1 x 1. Train mode normalizes with batch statistics and
// updates `state`; eval mode reads `state` only.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                           BasicBatchNormState<T>& state, Mode mode);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> avgpool2x2(const BasicTensor<T>& x);

// Gradient goes to the first maximum in row-major scan order of each window.
template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x);

// Doubles H and W. Half-pixel sample positions, edges clamped.
template <typename T>
BasicTensor<T> upsample_bilinear2x(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// grid: N x 2 x Hout x Wout holding (u, v) in [-1, 1]; (-1, -1) is the centre
// of the top-left pixel and (1, 1) the centre of the bottom-right one.
// Samples outside the image read zero. The grid is a constant: only x gets a
// gradient.
template <typename T>
BasicTensor<T> grid_sample_bilinear(const BasicTensor<T>& x, const BasicTensor<T>& grid);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor);

// Reductions to a 1x1x1x1 tensor. Accumulation is in double.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);

// Non-differentiable helpers.
template <typename T>
BasicTensor<T> identity_grid(int n, int h, int w);

template <typename T>
BasicTensor<T> stack_batch(std::span<const BasicTensor<T>> items);

template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& x, int index);

} // namespace aasn
