#include "gazefl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace gazefl {

EvalResult EvalResult::from_errors(TrainingMode mode, std::vector<std::uint32_t> ids,
                                   std::vector<double> errors) {
  if (ids.empty() || ids.size() != errors.size()) {
    throw std::invalid_argument("EvalResult needs one error per participant");
  }
  for (double e : errors) {
    if (!(e >= 0.0 && e <= 180.0)) {
      throw std::invalid_argument("angular error outside [0, 180]: " + std::to_string(e));
    }
  }
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&ids](std::size_t a, std::size_t b) {
    return ids[a] < ids[b];
  });
  EvalResult r;
  r.mode = mode;
  for (std::size_t i : order) {
    r.ids.push_back(ids[i]);
    r.errors.push_back(errors[i]);
  }
  r.mean = std::accumulate(r.errors.begin(), r.errors.end(), 0.0) /
           static_cast<double>(r.errors.size());
  const auto [lo, hi] = std::minmax_element(r.errors.begin(), r.errors.end());
  r.min = *lo;
  r.max = *hi;
  return r;
}

Predictor params_predictor(const Architecture& arch, std::vector<float> params) {
  auto net = std::make_shared<GazeNet<float>>(arch);
  net->set_params(params);
  return [net](std::uint32_t, std::span<const Sample* const> samples) {
    const auto& arch = net->architecture();
    const auto inputs = build_input_cache(samples, arch.input_downsample);
    std::vector<GazeAngles> out;
    out.reserve(samples.size());
    constexpr std::size_t kChunk = 256;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
      idx.resize(std::min(kChunk, samples.size() - start));
      std::iota(idx.begin(), idx.end(), start);
      const auto pred = forward(*net, make_batch<float>(inputs, idx));
      for (std::size_t i = 0; i < idx.size(); ++i) out.push_back({pred[2 * i], pred[2 * i + 1]});
    }
    return out;
  };
}

Predictor result_predictor(const TrainingResult<float>& result) {
  if (result.models.empty()) throw std::invalid_argument("training result holds no model");
  std::vector<std::pair<std::uint32_t, Predictor>> per_id;
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    per_id.emplace_back(result.model_ids[i], params_predictor(result.arch, result.models[i]));
  }
  if (per_id.size() == 1) return per_id.front().second;
  return [per_id](std::uint32_t participant, std::span<const Sample* const> samples) {
    for (const auto& [id, predict] : per_id) {
      if (id == participant) return predict(participant, samples);
    }
    throw std::invalid_argument("no model for participant " + std::to_string(participant));
  };
}

double mean_angular_error(const Predictor& predictor, std::uint32_t participant,
                          std::span<const Sample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("mean_angular_error of no samples");
  const auto pred = predictor(participant, samples);
  if (pred.size() != samples.size()) {
    throw std::runtime_error("predictor returned " + std::to_string(pred.size()) +
                             " predictions for " + std::to_string(samples.size()) + " samples");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    sum += angular_error_deg(pred[i], samples[i]->gaze());
  }
  return sum / static_cast<double>(samples.size());
}

EvalResult eval_person_specific(const Predictor& predictor,
                                std::span<const ClientState> clients, TrainingMode mode) {
  std::vector<std::uint32_t> ids;
  std::vector<double> errors;
  for (const auto& c : clients) {
    if (c.validation.empty()) {
      throw std::invalid_argument("participant " + std::to_string(c.id) +
                                  " has no validation split");
    }
    std::vector<const Sample*> val;
    for (std::size_t i : c.validation) val.push_back(&c.samples[i]);
    ids.push_back(c.id);
    errors.push_back(mean_angular_error(predictor, c.id, val));
  }
  return EvalResult::from_errors(mode, std::move(ids), std::move(errors));
}

double eval_person_independent(const HeldOutTrainer& train,
                               std::span<const ParticipantDataset> federation,
                               std::uint16_t held_out_id) {
  if (federation.size() < 2) {
    throw std::invalid_argument("person-independent evaluation needs at least two participants");
  }
  std::vector<ParticipantDataset> training;
  const ParticipantDataset* held_out = nullptr;
  for (const auto& ds : federation) {
    if (ds.id == held_out_id) {
      held_out = &ds;
    } else {
      training.push_back(ds);
    }
  }
  if (held_out == nullptr) {
    throw std::invalid_argument("unknown held-out participant " + std::to_string(held_out_id));
  }
  return train(training, *held_out);
}

EvalResult leave_one_out(const HeldOutTrainer& train,
                         std::span<const ParticipantDataset> federation, TrainingMode mode,
                         std::span<const std::uint16_t> held_out) {
  std::vector<std::uint16_t> legs(held_out.begin(), held_out.end());
  if (legs.empty()) {
    for (const auto& ds : federation) legs.push_back(ds.id);
  }
  std::vector<std::uint32_t> ids;
  std::vector<double> errors;
  for (std::uint16_t id : legs) {
    ids.push_back(id);
    errors.push_back(eval_person_independent(train, federation, id));
  }
  return EvalResult::from_errors(mode, std::move(ids), std::move(errors));
}

std::vector<double> moving_average(std::span<const double> curve, std::size_t window) {
  if (window == 0) throw std::invalid_argument("moving_average window must be >= 1");
  std::vector<double> out;
  double sum = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    sum += curve[i];
    if (i >= window) sum -= curve[i - window];
    out.push_back(sum / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

double ls_slope(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double x_mean = static_cast<double>(n - 1) / 2.0;
  const double y_mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    sxy += dx * (values[i] - y_mean);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

bool smoothed_non_increasing(std::span<const double> curve, std::size_t window,
                             double tail_fraction) {
  if (curve.empty()) return false;
  for (double v : curve) {
    if (!std::isfinite(v)) return false;
  }
  const auto smooth = moving_average(curve, window);
  const auto tail = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(curve.size()))));
  const std::size_t start = smooth.size() > tail ? smooth.size() - tail : 0;
  return ls_slope(std::span<const double>(smooth).subspan(start)) <= 0.0;
}

double tail_std(std::span<const double> values, std::size_t count) {
  const std::size_t n = std::min(count, values.size());
  if (n == 0) return 0.0;
  const auto tail = values.subspan(values.size() - n);
  const double mean = std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : tail) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(n));
}

void write_report_csv(std::ostream& out, const EvalResult& result) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  const auto mode = to_string(result.mode);
  out << kReportHeader << "\n";
  for (std::size_t i = 0; i < result.ids.size(); ++i) {
    out << result.ids[i] << "," << mode << "," << num(result.errors[i]) << "\n";
  }
  out << "mean," << mode << "," << num(result.mean) << "\n";
  out << "min," << mode << "," << num(result.min) << "\n";
  out << "max," << mode << "," << num(result.max) << "\n";
}

}  // namespace gazefl
