#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazefl/gaze_net.hpp"

namespace gazefl {

template <typename T>
using ParamVector = std::vector<T>;

// Client optimizer: SGD with Nesterov momentum,
//   v <- momentum * v + lr * grad(theta - momentum * v);  theta <- theta - v.
template <typename T>
struct SgdNesterovState {
  ParamVector<T> velocity;
  double lr = 1e-5;
  double momentum = 0.9;

  static SgdNesterovState zeros(std::size_t n, double lr, double momentum);
};

template <typename T>
using GradFn = std::function<ParamVector<T>(std::span<const T>)>;

// Advances params and state in place. A non-finite gradient throws
// NonFiniteError naming the offending layer when `layout` is given.
template <typename T>
void sgd_nesterov_step(ParamVector<T>& params, SgdNesterovState<T>& state,
                       const GradFn<T>& grad_fn, const ParamLayout* layout = nullptr);

// Step decay: base * decay^(number of milestones <= round).
struct LrSchedule {
  double base = 1e-5;
  double decay = 0.1;
  std::vector<std::uint64_t> milestones;

  void validate() const;
  double lr_at_round(std::uint64_t round) const;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ParamVector<T> m;
  ParamVector<T> u;
  AdamConfig config;
  std::uint64_t t = 0;

  static AdamState zeros(std::size_t n, const AdamConfig& config);
};

// t <- t+1; m <- b1 m + (1-b1) g; u <- b2 u + (1-b2) g^2;
// theta <- theta - lr * m_hat / (sqrt(u_hat) + eps).
template <typename T>
void adam_step(ParamVector<T>& params, AdamState<T>& state, std::span<const T> grad);

enum class Weighting { BySamples, Uniform };

template <typename T>
struct WeightedParams {
  std::uint32_t client_id = 0;
  std::span<const T> params;
  std::uint64_t num_samples = 0;
};

class AggregationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Weighted mean of client parameter vectors, summed in client-id order with
// 64-bit accumulation.
template <typename T>
ParamVector<T> fedavg_aggregate(std::span<const WeightedParams<T>> updates,
                                Weighting weighting = Weighting::BySamples);

// Average of the local differences (server - local_i), computed as
// server - fedavg_aggregate(updates) in 64-bit arithmetic.
template <typename T>
ParamVector<T> pseudo_gradient(std::span<const T> server_params,
                               std::span<const WeightedParams<T>> updates,
                               Weighting weighting = Weighting::BySamples);

}  // namespace gazefl
