#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gazefl/tensor.hpp"

namespace gazefl {

// Layer sizes of the gaze CNN. The default is the LeNet-style network of the
// MPIIGaze lineage: conv(20, 5x5) -> pool -> conv(50, 5x5) -> pool -> fc(500),
// with the head pose concatenated right before the 2-unit output layer.
// `input_downsample` halves the eye image that many times with 2x2 max pools
// before conv1; the compact profile uses it to make desk-scale federations
// affordable.
struct Architecture {
  std::size_t image_height = 36;
  std::size_t image_width = 60;
  std::size_t input_downsample = 0;
  std::size_t conv1_kernels = 20;
  std::size_t conv1_size = 5;
  std::size_t conv2_kernels = 50;
  std::size_t conv2_size = 5;
  std::size_t fc_units = 500;

  static Architecture lenet() { return {}; }
  static Architecture compact();

  // Throws std::invalid_argument if the layer chain does not fit the image.
  void validate() const;

  std::size_t conv1_input_height() const;
  std::size_t conv1_input_width() const;
  std::size_t flattened_size() const;
  std::size_t param_count() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// One named block of a flattened parameter vector.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

using ParamLayout = std::vector<ParamBlock>;

// Name of the block containing `index`, or "param[index]" if none does.
std::string block_name_at(const ParamLayout& layout, std::size_t index);

ParamLayout param_layout(const Architecture& arch);

struct GazeAngles {
  double yaw = 0.0;
  double pitch = 0.0;
};

// Model inputs for B samples. Images are row-major [B x H x W]; heads hold
// (pitch, yaw) pairs; targets hold (yaw, pitch) pairs. `downsampled` counts
// the input max pools already applied to the images; the network applies the
// rest of its `input_downsample`.
template <typename T>
struct GazeBatch {
  std::size_t size = 0;
  std::size_t downsampled = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> images;
  std::vector<T> heads;
  std::vector<T> targets;

  void reserve(std::size_t batch, std::size_t h, std::size_t w);
  std::span<const T> image(std::size_t i) const {
    return std::span<const T>(images).subspan(i * height * width, height * width);
  }
};

template <typename T>
class GazeNet {
 public:
  GazeNet() = default;
  explicit GazeNet(const Architecture& arch);

  // Fan-in scaled uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero
  // biases. Deterministic in the seed.
  static GazeNet init(const Architecture& arch, std::uint64_t seed);

  const Architecture& architecture() const noexcept { return arch_; }
  std::size_t param_count() const noexcept { return arch_.param_count(); }

  // Flattening order: conv1 w, b, conv2 w, b, fc1 w, b, out w, b.
  std::vector<T> param_vector() const;
  void set_params(std::span<const T> params);

  Tensor<T> conv1_weight, conv2_weight, fc1_weight, out_weight;
  std::vector<T> conv1_bias, conv2_bias, fc1_bias, out_bias;

 private:
  Architecture arch_;
};

// Returns a [B x 2] tensor of (yaw, pitch) predictions.
template <typename T>
Tensor<T> forward(const GazeNet<T>& net, const GazeBatch<T>& batch);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<T> grad;  // ParamVector order
};

template <typename T>
LossAndGrad<T> loss_and_grad(const GazeNet<T>& net, const GazeBatch<T>& batch);

// Smallest distance of the batch's forward pass to a non-differentiable point:
// ReLU pre-activations at 0, pooling-window ties and zero L1 residuals.
template <typename T>
double kink_margin(const GazeNet<T>& net, const GazeBatch<T>& batch);

// Unit gaze direction for (yaw, pitch) in the normalized camera space.
std::array<double, 3> gaze_vector(GazeAngles angles);

// Angle in degrees between the 3-D directions of `pred` and `truth`.
double angular_error_deg(GazeAngles pred, GazeAngles truth);

}  // namespace gazefl
