#include "gazefl/gaze_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "gazefl/layers.hpp"

namespace gazefl {

Architecture Architecture::compact() {
  Architecture arch;
  arch.input_downsample = 1;
  arch.conv1_kernels = 4;
  arch.conv1_size = 3;
  arch.conv2_kernels = 8;
  arch.conv2_size = 3;
  arch.fc_units = 16;
  return arch;
}

std::size_t Architecture::conv1_input_height() const {
  return image_height >> input_downsample;
}

std::size_t Architecture::conv1_input_width() const {
  return image_width >> input_downsample;
}

void Architecture::validate() const {
  auto fail = [this](const std::string& why) {
    throw std::invalid_argument(
        "architecture does not fit a " + std::to_string(image_width) + "x" +
        std::to_string(image_height) + " image: " + why);
  };
  if (conv1_kernels == 0 || conv2_kernels == 0 || fc_units == 0 ||
      conv1_size == 0 || conv2_size == 0) {
    fail("layer sizes must be positive");
  }
  std::size_t h = image_height, w = image_width;
  for (std::size_t i = 0; i < input_downsample; ++i) {
    if (h % 2 != 0 || w % 2 != 0) fail("input downsampling needs even dims");
    h /= 2;
    w /= 2;
  }
  for (std::size_t k : {conv1_size, conv2_size}) {
    if (k > h || k > w) fail("kernel larger than feature map");
    h = h - k + 1;
    w = w - k + 1;
    if (h % 2 != 0 || w % 2 != 0) fail("pooling after convolution needs even dims");
    h /= 2;
    w /= 2;
  }
}

std::size_t Architecture::flattened_size() const {
  std::size_t h = conv1_input_height(), w = conv1_input_width();
  h = (h - conv1_size + 1) / 2;
  w = (w - conv1_size + 1) / 2;
  h = (h - conv2_size + 1) / 2;
  w = (w - conv2_size + 1) / 2;
  return conv2_kernels * h * w;
}

std::size_t Architecture::param_count() const {
  return conv1_kernels * conv1_size * conv1_size + conv1_kernels +
         conv2_kernels * conv1_kernels * conv2_size * conv2_size + conv2_kernels +
         fc_units * flattened_size() + fc_units + 2 * (fc_units + 2) + 2;
}

ParamLayout param_layout(const Architecture& arch) {
  ParamLayout layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t size) {
    layout.push_back({std::move(name), offset, size});
    offset += size;
  };
  add("conv1.weight", arch.conv1_kernels * arch.conv1_size * arch.conv1_size);
  add("conv1.bias", arch.conv1_kernels);
  add("conv2.weight",
      arch.conv2_kernels * arch.conv1_kernels * arch.conv2_size * arch.conv2_size);
  add("conv2.bias", arch.conv2_kernels);
  add("fc1.weight", arch.fc_units * arch.flattened_size());
  add("fc1.bias", arch.fc_units);
  add("out.weight", 2 * (arch.fc_units + 2));
  add("out.bias", 2);
  return layout;
}

std::string block_name_at(const ParamLayout& layout, std::size_t index) {
  for (const auto& block : layout) {
    if (index >= block.offset && index < block.offset + block.size) return block.name;
  }
  return "param[" + std::to_string(index) + "]";
}

template <typename T>
void GazeBatch<T>::reserve(std::size_t batch, std::size_t h, std::size_t w) {
  height = h;
  width = w;
  images.reserve(batch * h * w);
  heads.reserve(batch * 2);
  targets.reserve(batch * 2);
}

template <typename T>
GazeNet<T>::GazeNet(const Architecture& arch) : arch_(arch) {
  arch_.validate();
  conv1_weight = Tensor<T>({arch.conv1_kernels, 1, arch.conv1_size, arch.conv1_size});
  conv1_bias.assign(arch.conv1_kernels, T{0});
  conv2_weight = Tensor<T>(
      {arch.conv2_kernels, arch.conv1_kernels, arch.conv2_size, arch.conv2_size});
  conv2_bias.assign(arch.conv2_kernels, T{0});
  fc1_weight = Tensor<T>({arch.fc_units, arch.flattened_size()});
  fc1_bias.assign(arch.fc_units, T{0});
  out_weight = Tensor<T>({2, arch.fc_units + 2});
  out_bias.assign(2, T{0});
}

template <typename T>
GazeNet<T> GazeNet<T>::init(const Architecture& arch, std::uint64_t seed) {
  GazeNet net(arch);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor<T>& weights, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : weights.data()) w = static_cast<T>(dist(rng));
  };
  fill(net.conv1_weight, arch.conv1_size * arch.conv1_size);
  fill(net.conv2_weight, arch.conv1_kernels * arch.conv2_size * arch.conv2_size);
  fill(net.fc1_weight, arch.flattened_size());
  fill(net.out_weight, arch.fc_units + 2);
  return net;
}

template <typename T>
std::vector<T> GazeNet<T>::param_vector() const {
  std::vector<T> params;
  params.reserve(param_count());
  auto append = [&params](std::span<const T> block) {
    params.insert(params.end(), block.begin(), block.end());
  };
  append(conv1_weight.data());
  append(conv1_bias);
  append(conv2_weight.data());
  append(conv2_bias);
  append(fc1_weight.data());
  append(fc1_bias);
  append(out_weight.data());
  append(out_bias);
  return params;
}

template <typename T>
void GazeNet<T>::set_params(std::span<const T> params) {
  if (params.size() != param_count()) {
    throw ShapeError("parameter vector has " + std::to_string(params.size()) +
                     " entries, network expects " + std::to_string(param_count()));
  }
  std::size_t offset = 0;
  auto take = [&](std::span<T> block) {
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(offset), block.size(),
                block.begin());
    offset += block.size();
  };
  take(conv1_weight.data());
  take(conv1_bias);
  take(conv2_weight.data());
  take(conv2_bias);
  take(fc1_weight.data());
  take(fc1_bias);
  take(out_weight.data());
  take(out_bias);
}

namespace {

template <typename T>
void check_batch(const GazeNet<T>& net, const GazeBatch<T>& batch) {
  const auto& arch = net.architecture();
  if (batch.downsampled > arch.input_downsample || batch.height != arch.image_height >> batch.downsampled ||
      batch.width != arch.image_width >> batch.downsampled ||
      batch.images.size() != batch.size * batch.height * batch.width ||
      batch.heads.size() != batch.size * 2 || batch.targets.size() != batch.size * 2) {
    throw ShapeError("batch of " + std::to_string(batch.size) + " images " +
                     std::to_string(batch.width) + "x" + std::to_string(batch.height) +
                     " does not match network input " + std::to_string(arch.image_width) +
                     "x" + std::to_string(arch.image_height));
  }
}

// Activations of one sample, kept for the backward pass.
template <typename T>
struct Trace {
  Tensor<T> input;
  Tensor<T> z1;
  nn::Pooled<T> p1;
  Tensor<T> z2;
  nn::Pooled<T> p2;
  std::vector<T> z3;
  std::vector<T> fused;  // relu(z3) followed by head pose
  std::vector<T> out;
};

template <typename T>
Trace<T> run_forward(const GazeNet<T>& net, const GazeBatch<T>& batch, std::size_t i) {
  const auto& arch = net.architecture();
  Trace<T> t;
  auto pixels = batch.image(i);
  t.input = Tensor<T>({1, batch.height, batch.width},
                      std::vector<T>(pixels.begin(), pixels.end()));
  for (std::size_t p = batch.downsampled; p < arch.input_downsample; ++p) {
    t.input = nn::maxpool2(t.input).output;
  }
  t.z1 = nn::conv2d<T>(t.input, net.conv1_weight, net.conv1_bias);
  t.p1 = nn::maxpool2(nn::relu(t.z1));
  t.z2 = nn::conv2d<T>(t.p1.output, net.conv2_weight, net.conv2_bias);
  t.p2 = nn::maxpool2(nn::relu(t.z2));
  t.z3 = nn::dense<T>(t.p2.output.data(), net.fc1_weight, net.fc1_bias);
  t.fused.resize(arch.fc_units + 2);
  for (std::size_t u = 0; u < arch.fc_units; ++u) {
    t.fused[u] = t.z3[u] > T{0} ? t.z3[u] : T{0};
  }
  t.fused[arch.fc_units] = batch.heads[2 * i];
  t.fused[arch.fc_units + 1] = batch.heads[2 * i + 1];
  t.out = nn::dense<T>(t.fused, net.out_weight, net.out_bias);
  return t;
}

template <typename T>
void accumulate(std::vector<T>& grad, std::size_t& offset, std::span<const T> block) {
  for (std::size_t j = 0; j < block.size(); ++j) grad[offset + j] += block[j];
  offset += block.size();
}

}  // namespace

template <typename T>
Tensor<T> forward(const GazeNet<T>& net, const GazeBatch<T>& batch) {
  check_batch(net, batch);
  Tensor<T> out({batch.size, 2});
  for (std::size_t i = 0; i < batch.size; ++i) {
    const auto trace = run_forward(net, batch, i);
    out[2 * i] = trace.out[0];
    out[2 * i + 1] = trace.out[1];
  }
  return out;
}

template <typename T>
LossAndGrad<T> loss_and_grad(const GazeNet<T>& net, const GazeBatch<T>& batch) {
  if (batch.size == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  check_batch(net, batch);
  const auto& arch = net.architecture();
  LossAndGrad<T> result{0.0, std::vector<T>(net.param_count(), T{0})};
  const T inv_batch = T{1} / static_cast<T>(batch.size);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size; ++i) {
    const auto t = run_forward(net, batch, i);
    std::vector<T> g_out(2);
    for (std::size_t a = 0; a < 2; ++a) {
      const T diff = t.out[a] - batch.targets[2 * i + a];
      total += std::abs(static_cast<double>(diff));
      g_out[a] = static_cast<T>((diff > T{0}) - (diff < T{0})) * inv_batch;
    }

    const auto d_out = nn::dense_backward<T>(t.fused, net.out_weight, g_out);
    std::vector<T> d_z3(arch.fc_units);
    for (std::size_t u = 0; u < arch.fc_units; ++u) {
      d_z3[u] = t.z3[u] > T{0} ? d_out.input[u] : T{0};
    }
    const auto d_fc1 = nn::dense_backward<T>(t.p2.output.data(), net.fc1_weight, d_z3);
    const Tensor<T> d_p2(t.p2.output.shape(), d_fc1.input);
    const auto d_a2 = nn::maxpool2_backward(d_p2, t.p2.argmax, t.z2.shape());
    const auto d_z2 = nn::relu_backward(t.z2, d_a2);
    const auto d_conv2 = nn::conv2d_backward(t.p1.output, net.conv2_weight, d_z2);
    const auto d_a1 = nn::maxpool2_backward(d_conv2.input, t.p1.argmax, t.z1.shape());
    const auto d_z1 = nn::relu_backward(t.z1, d_a1);
    const auto d_conv1 = nn::conv2d_backward(t.input, net.conv1_weight, d_z1, false);

    std::size_t offset = 0;
    accumulate<T>(result.grad, offset, d_conv1.kernels.data());
    accumulate<T>(result.grad, offset, d_conv1.bias);
    accumulate<T>(result.grad, offset, d_conv2.kernels.data());
    accumulate<T>(result.grad, offset, d_conv2.bias);
    accumulate<T>(result.grad, offset, d_fc1.weights.data());
    accumulate<T>(result.grad, offset, d_fc1.bias);
    accumulate<T>(result.grad, offset, d_out.weights.data());
    accumulate<T>(result.grad, offset, d_out.bias);
  }
  result.loss = total / static_cast<double>(batch.size);
  return result;
}

template <typename T>
double kink_margin(const GazeNet<T>& net, const GazeBatch<T>& batch) {
  check_batch(net, batch);
  double margin = std::numeric_limits<double>::infinity();
  auto visit_relu = [&margin](std::span<const T> pre) {
    for (T v : pre) margin = std::min(margin, std::abs(static_cast<double>(v)));
  };
  auto visit_pool = [&margin](const Tensor<T>& in) {
    const std::size_t c_n = in.dim(0), h = in.dim(1), w = in.dim(2);
    for (std::size_t c = 0; c < c_n; ++c) {
      for (std::size_t y = 0; y < h; y += 2) {
        for (std::size_t x = 0; x < w; x += 2) {
          std::array<double, 4> v{};
          for (std::size_t k = 0; k < 4; ++k) {
            v[k] = std::max(0.0, static_cast<double>(in.at(c, y + k / 2, x + k % 2)));
          }
          std::sort(v.begin(), v.end());
          if (v[3] > 0.0) margin = std::min(margin, v[3] - v[2]);
        }
      }
    }
  };
  for (std::size_t i = 0; i < batch.size; ++i) {
    const auto t = run_forward(net, batch, i);
    visit_relu(t.z1.data());
    visit_pool(t.z1);
    visit_relu(t.z2.data());
    visit_pool(t.z2);
    visit_relu(t.z3);
    for (std::size_t a = 0; a < 2; ++a) {
      margin = std::min(margin, std::abs(static_cast<double>(t.out[a]) -
                                         static_cast<double>(batch.targets[2 * i + a])));
    }
  }
  return margin;
}

std::array<double, 3> gaze_vector(GazeAngles a) {
  return {-std::cos(a.pitch) * std::sin(a.yaw), -std::sin(a.pitch),
          -std::cos(a.pitch) * std::cos(a.yaw)};
}

double angular_error_deg(GazeAngles pred, GazeAngles truth) {
  const auto p = gaze_vector(pred);
  const auto t = gaze_vector(truth);
  const double dot = std::clamp(p[0] * t[0] + p[1] * t[1] + p[2] * t[2], -1.0, 1.0);
  return std::acos(dot) * 180.0 / std::numbers::pi;
}

template struct GazeBatch<float>;
template struct GazeBatch<double>;
template class GazeNet<float>;
template class GazeNet<double>;
template Tensor<float> forward<float>(const GazeNet<float>&, const GazeBatch<float>&);
template Tensor<double> forward<double>(const GazeNet<double>&, const GazeBatch<double>&);
template LossAndGrad<float> loss_and_grad<float>(const GazeNet<float>&,
                                                 const GazeBatch<float>&);
template LossAndGrad<double> loss_and_grad<double>(const GazeNet<double>&,
                                                   const GazeBatch<double>&);
template double kink_margin<float>(const GazeNet<float>&, const GazeBatch<float>&);
template double kink_margin<double>(const GazeNet<double>&, const GazeBatch<double>&);

}  // namespace gazefl
