#include "gazefl/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gazefl {

template <typename T>
SgdNesterovState<T> SgdNesterovState<T>::zeros(std::size_t n, double lr,
                                               double momentum) {
  if (!(lr >= 0.0)) throw std::invalid_argument("client lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  return {ParamVector<T>(n, T{0}), lr, momentum};
}

template <typename T>
void sgd_nesterov_step(ParamVector<T>& params, SgdNesterovState<T>& state,
                       const GradFn<T>& grad_fn, const ParamLayout* layout) {
  if (state.velocity.size() != params.size()) {
    throw ShapeError("velocity has " + std::to_string(state.velocity.size()) +
                     " entries, params " + std::to_string(params.size()));
  }
  const T momentum = static_cast<T>(state.momentum);
  const T lr = static_cast<T>(state.lr);
  ParamVector<T> lookahead(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    lookahead[i] = params[i] - momentum * state.velocity[i];
  }
  const ParamVector<T> grad = grad_fn(lookahead);
  if (grad.size() != params.size()) {
    throw ShapeError("gradient has " + std::to_string(grad.size()) +
                     " entries, params " + std::to_string(params.size()));
  }
  const std::size_t bad = first_non_finite<T>(grad);
  if (bad != grad.size()) {
    throw NonFiniteError(layout ? block_name_at(*layout, bad) : "gradient", bad);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = momentum * state.velocity[i] + lr * grad[i];
    params[i] -= state.velocity[i];
  }
}

void LrSchedule::validate() const {
  if (!(base > 0.0)) throw std::invalid_argument("schedule base lr must be > 0");
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw std::invalid_argument("schedule decay must lie in (0, 1]");
  }
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument("schedule milestones must be strictly increasing");
    }
  }
}

double LrSchedule::lr_at_round(std::uint64_t round) const {
  const auto passed = std::count_if(milestones.begin(), milestones.end(),
                                    [round](std::uint64_t m) { return m <= round; });
  double lr = base;
  for (std::ptrdiff_t i = 0; i < passed; ++i) lr *= decay;
  return lr;
}

template <typename T>
AdamState<T> AdamState<T>::zeros(std::size_t n, const AdamConfig& config) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(config.eps > 0.0) || !(config.lr > 0.0)) {
    throw std::invalid_argument("adam lr and eps must be > 0");
  }
  return {ParamVector<T>(n, T{0}), ParamVector<T>(n, T{0}), config, 0};
}

template <typename T>
void adam_step(ParamVector<T>& params, AdamState<T>& state, std::span<const T> grad) {
  if (grad.size() != params.size() || state.m.size() != params.size() ||
      state.u.size() != params.size()) {
    throw ShapeError("adam_step: params [" + std::to_string(params.size()) +
                     "], grad [" + std::to_string(grad.size()) + "], moments [" +
                     std::to_string(state.m.size()) + "]");
  }
  const std::size_t bad = first_non_finite(grad);
  if (bad != grad.size()) throw NonFiniteError("pseudo-gradient", bad);

  const auto& cfg = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double u = cfg.beta2 * state.u[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.u[i] = static_cast<T>(u);
    const double m_hat = m / correction1;
    const double u_hat = u / correction2;
    params[i] = static_cast<T>(params[i] - cfg.lr * m_hat / (std::sqrt(u_hat) + cfg.eps));
  }
}

namespace {

template <typename T>
std::vector<double> weighted_mean(std::span<const WeightedParams<T>> updates,
                                  Weighting weighting) {
  if (updates.empty()) throw AggregationError("aggregation needs at least one update");
  const std::size_t n = updates.front().params.size();
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  std::vector<double> sum(n, 0.0);
  double total_weight = 0.0;
  for (std::size_t idx : order) {
    const auto& update = updates[idx];
    if (update.params.size() != n) {
      throw AggregationError("client " + std::to_string(update.client_id) + " sent " +
                             std::to_string(update.params.size()) +
                             " parameters, expected " + std::to_string(n));
    }
    if (update.num_samples == 0) {
      throw AggregationError("client " + std::to_string(update.client_id) +
                             " reported zero samples");
    }
    const double weight = weighting == Weighting::BySamples
                              ? static_cast<double>(update.num_samples)
                              : 1.0;
    total_weight += weight;
    for (std::size_t i = 0; i < n; ++i) sum[i] += weight * static_cast<double>(update.params[i]);
  }
  for (auto& v : sum) v /= total_weight;
  return sum;
}

}  // namespace

template <typename T>
ParamVector<T> fedavg_aggregate(std::span<const WeightedParams<T>> updates,
                                Weighting weighting) {
  const auto mean = weighted_mean(updates, weighting);
  return ParamVector<T>(mean.begin(), mean.end());
}

template <typename T>
ParamVector<T> pseudo_gradient(std::span<const T> server_params,
                               std::span<const WeightedParams<T>> updates,
                               Weighting weighting) {
  const auto mean = weighted_mean(updates, weighting);
  if (mean.size() != server_params.size()) {
    throw AggregationError("server has " + std::to_string(server_params.size()) +
                           " parameters, clients " + std::to_string(mean.size()));
  }
  ParamVector<T> grad(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    grad[i] = static_cast<T>(static_cast<double>(server_params[i]) - mean[i]);
  }
  return grad;
}

#define GAZEFL_INSTANTIATE_OPTIMIZERS(T)                                             \
  template struct SgdNesterovState<T>;                                               \
  template struct AdamState<T>;                                                      \
  template void sgd_nesterov_step<T>(ParamVector<T>&, SgdNesterovState<T>&,          \
                                     const GradFn<T>&, const ParamLayout*);          \
  template void adam_step<T>(ParamVector<T>&, AdamState<T>&, std::span<const T>);    \
  template ParamVector<T> fedavg_aggregate<T>(std::span<const WeightedParams<T>>,    \
                                              Weighting);                            \
  template ParamVector<T> pseudo_gradient<T>(                                        \
      std::span<const T>, std::span<const WeightedParams<T>>, Weighting);

GAZEFL_INSTANTIATE_OPTIMIZERS(float)
GAZEFL_INSTANTIATE_OPTIMIZERS(double)

#undef GAZEFL_INSTANTIATE_OPTIMIZERS

}  // namespace gazefl
