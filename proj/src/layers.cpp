#include "gazefl/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gazefl::nn {
namespace {

void require_rank(const std::vector<std::size_t>& shape, std::size_t rank,
                  const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(what) + " must have rank " +
                     std::to_string(rank) + ", got " + shape_string(shape));
  }
}

template <typename T>
T sign(T v) {
  return static_cast<T>((v > T{0}) - (v < T{0}));
}

}  // namespace

// The convolutions run over "wide" output rows: for a kernel tap (ky, kx)
// the contribution to output element y * W + x reads input element
// y * W + x + ky * W + kx, so each tap is a single contiguous loop over the
// whole plane. Columns x >= W' of the wide plane are scratch and dropped.
namespace {

std::size_t wide_extent(std::size_t out_h, std::size_t out_w, std::size_t width) {
  return (out_h - 1) * width + out_w;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T total{0};
  for (; i < n; ++i) total += a[i] * b[i];
  for (std::size_t j = 0; j < kLanes; ++j) total += acc[j];
  return total;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels,
                 std::span<const T> bias) {
  require_rank(input.shape(), 3, "conv2d input");
  require_rank(kernels.shape(), 4, "conv2d kernels");
  const std::size_t channels = input.dim(0), height = input.dim(1),
                    width = input.dim(2);
  const std::size_t count = kernels.dim(0), kh = kernels.dim(2),
                    kw = kernels.dim(3);
  if (kernels.dim(1) != channels || kh > height || kw > width ||
      bias.size() != count) {
    throw ShapeError("conv2d: input " + input.shape_str() + " incompatible with kernels " +
                     kernels.shape_str() + " and bias [" +
                     std::to_string(bias.size()) + "]");
  }
  const std::size_t out_h = height - kh + 1, out_w = width - kw + 1;
  const std::size_t extent = wide_extent(out_h, out_w, width);
  Tensor<T> out({count, out_h, out_w});
  std::vector<T> wide(extent);
  const T* in = input.raw();
  const T* ker = kernels.raw();
  for (std::size_t k = 0; k < count; ++k) {
    std::fill(wide.begin(), wide.end(), bias[k]);
    T* dst = wide.data();
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = in + c * height * width;
      const T* w = ker + ((k * channels + c) * kh) * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const T weight = w[ky * kw + kx];
          const T* shifted = src + ky * width + kx;
          for (std::size_t i = 0; i < extent; ++i) dst[i] += weight * shifted[i];
        }
      }
    }
    T* plane = out.raw() + k * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      std::copy_n(dst + y * width, out_w, plane + y * out_w);
    }
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                               const Tensor<T>& grad_output,
                               bool need_input_grad) {
  const std::size_t channels = input.dim(0), height = input.dim(1),
                    width = input.dim(2);
  const std::size_t count = kernels.dim(0), kh = kernels.dim(2),
                    kw = kernels.dim(3);
  const std::size_t out_h = height - kh + 1, out_w = width - kw + 1;
  if (grad_output.rank() != 3 || grad_output.dim(0) != count ||
      grad_output.dim(1) != out_h || grad_output.dim(2) != out_w) {
    throw ShapeError("conv2d_backward: grad " + grad_output.shape_str() +
                     " does not match output of input " + input.shape_str() +
                     " and kernels " + kernels.shape_str());
  }
  Conv2dGrads<T> grads{
      need_input_grad ? Tensor<T>(input.shape()) : Tensor<T>(),
      Tensor<T>(kernels.shape()), std::vector<T>(count, T{0})};
  const std::size_t extent = wide_extent(out_h, out_w, width);
  std::vector<T> wide(extent);
  const T* in = input.raw();
  const T* ker = kernels.raw();
  for (std::size_t k = 0; k < count; ++k) {
    const T* g = grad_output.raw() + k * out_h * out_w;
    std::fill(wide.begin(), wide.end(), T{0});
    T acc{0};
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        wide[y * width + x] = g[y * out_w + x];
        acc += g[y * out_w + x];
      }
    }
    grads.bias[k] = acc;
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = in + c * height * width;
      T* dsrc = need_input_grad ? grads.input.raw() + c * height * width : nullptr;
      const std::size_t base = ((k * channels + c) * kh) * kw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t shift = ky * width + kx;
          grads.kernels[base + ky * kw + kx] = dot(wide.data(), src + shift, extent);
          if (dsrc != nullptr) {
            const T weight = ker[base + ky * kw + kx];
            T* drow = dsrc + shift;
            for (std::size_t i = 0; i < extent; ++i) drow[i] += weight * wide[i];
          }
        }
      }
    }
  }
  return grads;
}

template <typename T>
Pooled<T> maxpool2(const Tensor<T>& input) {
  require_rank(input.shape(), 3, "maxpool2 input");
  const std::size_t channels = input.dim(0), height = input.dim(1),
                    width = input.dim(2);
  if (height % 2 != 0 || width % 2 != 0) {
    throw ShapeError("maxpool2 needs even spatial dims, got " + input.shape_str());
  }
  const std::size_t out_h = height / 2, out_w = width / 2;
  Pooled<T> result{Tensor<T>({channels, out_h, out_w}),
                   std::vector<std::size_t>(channels * out_h * out_w)};
  std::size_t o = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x, ++o) {
        std::size_t best = (c * height + 2 * y) * width + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * height + 2 * y + dy) * width + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        result.output[o] = input[best];
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_output,
                            std::span<const std::size_t> argmax,
                            const std::vector<std::size_t>& input_shape) {
  if (argmax.size() != grad_output.size()) {
    throw ShapeError("maxpool2_backward: grad " + grad_output.shape_str() +
                     " vs " + std::to_string(argmax.size()) + " stored indices");
  }
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

template <typename T>
std::vector<T> dense(std::span<const T> input, const Tensor<T>& weights,
                     std::span<const T> bias) {
  require_rank(weights.shape(), 2, "dense weights");
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  if (cols != input.size() || rows != bias.size()) {
    throw ShapeError("dense: weights " + weights.shape_str() + " incompatible with input [" +
                     std::to_string(input.size()) + "] and bias [" +
                     std::to_string(bias.size()) + "]");
  }
  std::vector<T> out(bias.begin(), bias.end());
  const T* w = weights.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] += dot(w + r * cols, input.data(), cols);
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(std::span<const T> input, const Tensor<T>& weights,
                             std::span<const T> grad_output) {
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  if (cols != input.size() || rows != grad_output.size()) {
    throw ShapeError("dense_backward: weights " + weights.shape_str() +
                     " incompatible with input [" + std::to_string(input.size()) +
                     "] and grad [" + std::to_string(grad_output.size()) + "]");
  }
  DenseGrads<T> grads{std::vector<T>(cols, T{0}), Tensor<T>(weights.shape()),
                      std::vector<T>(grad_output.begin(), grad_output.end())};
  const T* w = weights.raw();
  T* dw = grads.weights.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T g = grad_output[r];
    const T* row = w + r * cols;
    T* drow = dw + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      drow[c] = g * input[c];
      grads.input[c] += g * row[c];
    }
  }
  return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_output) {
  if (input.shape() != grad_output.shape()) {
    throw ShapeError("relu_backward: input " + input.shape_str() + " vs grad " +
                     grad_output.shape_str());
  }
  Tensor<T> grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > T{0})) grad[i] = T{0};
  }
  return grad;
}

template <typename T>
L1Loss<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape() || pred.rank() != 2 || pred.dim(1) != 2 ||
      pred.dim(0) == 0) {
    throw ShapeError("l1_loss: prediction " + pred.shape_str() + " vs target " +
                     target.shape_str() + " (expected matching [B x 2], B >= 1)");
  }
  const std::size_t batch = pred.dim(0);
  L1Loss<T> result{0.0, Tensor<T>(pred.shape())};
  const T inv = T{1} / static_cast<T>(batch);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T diff = pred[i] - target[i];
    total += std::abs(static_cast<double>(diff));
    result.grad[i] = sign(diff) * inv;
  }
  result.loss = total / static_cast<double>(batch);
  return result;
}

std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be > 0");
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = point[i];
    point[i] = original + step;
    const double up = f(point);
    point[i] = original - step;
    const double down = f(point);
    point[i] = original;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

#define GAZEFL_INSTANTIATE_LAYERS(T)                                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&,                \
                               std::span<const T>);                               \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,  \
                                             const Tensor<T>&, bool);             \
  template Pooled<T> maxpool2<T>(const Tensor<T>&);                               \
  template Tensor<T> maxpool2_backward<T>(const Tensor<T>&,                       \
                                          std::span<const std::size_t>,           \
                                          const std::vector<std::size_t>&);       \
  template std::vector<T> dense<T>(std::span<const T>, const Tensor<T>&,          \
                                   std::span<const T>);                           \
  template DenseGrads<T> dense_backward<T>(std::span<const T>, const Tensor<T>&,  \
                                           std::span<const T>);                   \
  template Tensor<T> relu<T>(const Tensor<T>&);                                   \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);        \
  template L1Loss<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&);

GAZEFL_INSTANTIATE_LAYERS(float)
GAZEFL_INSTANTIATE_LAYERS(double)

#undef GAZEFL_INSTANTIATE_LAYERS

}  // namespace gazefl::nn
