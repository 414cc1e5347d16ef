#pragma once

// Forward and backward passes for the layer set used by the gaze CNN:
// valid stride-1 cross-correlation, 2x2 max pooling, dense, ReLU and the
// per-sample L1 regression loss. Every function is pure.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gazefl/tensor.hpp"

namespace gazefl::nn {

// input [C x H x W], kernels [K x C x kh x kw], bias [K] -> [K x H' x W']
// with H' = H - kh + 1 and W' = W - kw + 1. No kernel flip.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels,
                 std::span<const T> bias);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;  // empty when not requested
  Tensor<T> kernels;
  std::vector<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                               const Tensor<T>& grad_output,
                               bool need_input_grad = true);

template <typename T>
struct Pooled {
  Tensor<T> output;
  // Flat input index of the winning element for each output element.
  std::vector<std::size_t> argmax;
};

// 2x2 non-overlapping max pool. Ties go to the first element in row-major
// window order.
template <typename T>
Pooled<T> maxpool2(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_output,
                            std::span<const std::size_t> argmax,
                            const std::vector<std::size_t>& input_shape);

// out = W x + b with W [m x n].
template <typename T>
std::vector<T> dense(std::span<const T> input, const Tensor<T>& weights,
                     std::span<const T> bias);

template <typename T>
struct DenseGrads {
  std::vector<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
DenseGrads<T> dense_backward(std::span<const T> input, const Tensor<T>& weights,
                             std::span<const T> grad_output);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// Passes the upstream gradient where input > 0; zero elsewhere, including 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output);

template <typename T>
struct L1Loss {
  double loss = 0.0;
  Tensor<T> grad;  // [B x 2]
};

// loss = mean over rows of |pred - target| summed over the two angles.
// grad = sign(pred - target) / B with sign(0) = 0.
template <typename T>
L1Loss<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Central-difference gradient of f at params.
std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double step);

}  // namespace gazefl::nn
