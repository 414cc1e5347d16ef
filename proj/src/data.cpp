#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "gazefl/data.hpp"
#include "gazefl/layers.hpp"
#include "gazefl/seeding.hpp"

namespace gazefl {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Loaded:
      return "loaded";
    case Provenance::Synthetic:
      return "synthetic";
    case Provenance::Noisy:
      return "noisy";
  }
  return "unknown";
}

void validate(const ParticipantDataset& ds) {
  const std::string who = "participant " + std::to_string(ds.id);
  if (ds.samples.empty()) throw std::invalid_argument(who + " has no samples");
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const std::string where = who + " sample " + std::to_string(i);
    if (s.eye.size() != kEyePixels) {
      throw std::invalid_argument(where + ": eye image has " + std::to_string(s.eye.size()) +
                                  " pixels, expected 2160");
    }
    if (!all_finite<float>(s.eye)) throw std::invalid_argument(where + ": non-finite pixel");
    for (float a : {s.head_pitch, s.head_yaw, s.gaze_yaw, s.gaze_pitch}) {
      if (!std::isfinite(a) || std::abs(a) >= std::numbers::pi_v<float>) {
        throw std::invalid_argument(where + ": angle out of range (-pi, pi)");
      }
    }
    if (ds.provenance != Provenance::Noisy) {
      for (float p : s.eye) {
        if (p < 0.0f || p > 1.0f) {
          throw std::invalid_argument(where + ": pixel outside [0, 1] in clean data");
        }
      }
    }
  }
}

std::vector<std::uint32_t> imbalance_counts(std::size_t n_participants,
                                            std::uint32_t min_count,
                                            std::uint32_t max_count,
                                            std::uint64_t seed) {
  if (min_count < 1 || min_count > max_count) {
    throw std::invalid_argument("imbalance_counts needs 1 <= min <= max");
  }
  std::mt19937_64 rng(derive_seed(seed, {tag(Stream::Imbalance)}));
  std::uniform_real_distribution<double> dist(std::log(static_cast<double>(min_count)),
                                              std::log(static_cast<double>(max_count)));
  std::vector<std::uint32_t> counts(n_participants);
  for (auto& c : counts) {
    const double draw = std::round(std::exp(dist(rng)));
    c = static_cast<std::uint32_t>(
        std::clamp(draw, static_cast<double>(min_count), static_cast<double>(max_count)));
  }
  return counts;
}

ParticipantDataset inject_noise(const ParticipantDataset& ds, double sigma,
                                std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  ParticipantDataset out = ds;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(derive_seed(seed, {tag(Stream::Noise), ds.id}));
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& s : out.samples) {
    for (auto& p : s.eye) p = static_cast<float>(p + noise(rng));
  }
  out.provenance = Provenance::Noisy;
  return out;
}

std::vector<double> label_histogram(const ParticipantDataset& ds) {
  std::vector<double> hist(kHistogramBins * kHistogramBins, 0.0);
  auto bin = [](double angle) {
    const double scaled = (angle + kHistogramRange) / (2.0 * kHistogramRange) *
                          static_cast<double>(kHistogramBins);
    return static_cast<std::size_t>(
        std::clamp(std::floor(scaled), 0.0, static_cast<double>(kHistogramBins - 1)));
  };
  for (const auto& s : ds.samples) hist[bin(s.gaze_yaw) * kHistogramBins + bin(s.gaze_pitch)] += 1.0;
  if (!ds.samples.empty()) {
    for (auto& h : hist) h /= static_cast<double>(ds.samples.size());
  }
  return hist;
}

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

template <typename Range>
Moments moments(const Range& values, std::size_t n) {
  if (n == 0) return {};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(n))};
}

}  // namespace

PartitionStats partition_stats(std::span<const ParticipantDataset> federation) {
  if (federation.empty()) throw std::invalid_argument("partition_stats needs participants");
  PartitionStats stats;
  std::vector<std::vector<double>> hists;
  for (const auto& ds : federation) {
    ParticipantStats ps;
    ps.id = ds.id;
    ps.count = ds.size();
    std::vector<double> pixels;
    pixels.reserve(ds.size() * kEyePixels);
    std::vector<double> yaws, pitches;
    for (const auto& s : ds.samples) {
      pixels.insert(pixels.end(), s.eye.begin(), s.eye.end());
      yaws.push_back(s.gaze_yaw);
      pitches.push_back(s.gaze_pitch);
    }
    const auto pm = moments(pixels, pixels.size());
    const auto ym = moments(yaws, yaws.size());
    const auto tm = moments(pitches, pitches.size());
    ps.pixel_mean = pm.mean;
    ps.pixel_std = pm.std;
    ps.yaw_mean = ym.mean;
    ps.yaw_std = ym.std;
    ps.pitch_mean = tm.mean;
    ps.pitch_std = tm.std;
    stats.participants.push_back(ps);
    hists.push_back(label_histogram(ds));
  }
  const std::size_t n = federation.size();
  stats.label_distance.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < hists[i].size(); ++k) d += std::abs(hists[i][k] - hists[j][k]);
      stats.label_distance[i][j] = stats.label_distance[j][i] = d;
    }
  }
  return stats;
}

void write_stats_csv(std::ostream& out, const PartitionStats& stats) {
  out << "id,count,pixel_mean,pixel_std,yaw_mean,yaw_std,pitch_mean,pitch_std";
  for (const auto& p : stats.participants) out << ",l1_to_" << p.id;
  out << "\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < stats.participants.size(); ++i) {
    const auto& p = stats.participants[i];
    out << p.id << "," << p.count << "," << num(p.pixel_mean) << "," << num(p.pixel_std)
        << "," << num(p.yaw_mean) << "," << num(p.yaw_std) << "," << num(p.pitch_mean)
        << "," << num(p.pitch_std);
    for (double d : stats.label_distance[i]) out << "," << num(d);
    out << "\n";
  }
}

Split split_participant(std::size_t n, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("validation fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::floor(validation_fraction * static_cast<double>(n) + 0.5));
  if (n > 0) n_val = std::min(n_val, n - 1);
  Split split;
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

template <typename T>
GazeBatch<T> make_batch(std::span<const Sample* const> samples) {
  GazeBatch<T> batch;
  batch.reserve(samples.size(), kEyeHeight, kEyeWidth);
  batch.size = samples.size();
  for (const Sample* s : samples) {
    batch.images.insert(batch.images.end(), s->eye.begin(), s->eye.end());
    batch.heads.push_back(static_cast<T>(s->head_pitch));
    batch.heads.push_back(static_cast<T>(s->head_yaw));
    batch.targets.push_back(static_cast<T>(s->gaze_yaw));
    batch.targets.push_back(static_cast<T>(s->gaze_pitch));
  }
  return batch;
}

template <typename T>
GazeBatch<T> make_batch(std::span<const Sample> samples,
                        std::span<const std::size_t> indices) {
  std::vector<const Sample*> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(&samples[i]);
  return make_batch<T>(std::span<const Sample* const>(picked));
}

namespace {

void append_downsampled(std::vector<float>& out, std::span<const float> image,
                        std::size_t times) {
  Tensor<float> t({1, kEyeHeight, kEyeWidth}, std::vector<float>(image.begin(), image.end()));
  for (std::size_t i = 0; i < times; ++i) t = nn::maxpool2(t).output;
  out.insert(out.end(), t.data().begin(), t.data().end());
}

}  // namespace

InputCache build_input_cache(std::span<const Sample* const> samples, std::size_t times) {
  InputCache cache;
  cache.downsampled = times;
  cache.height = kEyeHeight >> times;
  cache.width = kEyeWidth >> times;
  cache.images.reserve(samples.size() * cache.height * cache.width);
  cache.heads.reserve(samples.size() * 2);
  cache.targets.reserve(samples.size() * 2);
  for (const Sample* s : samples) {
    append_downsampled(cache.images, s->eye, times);
    cache.heads.push_back(s->head_pitch);
    cache.heads.push_back(s->head_yaw);
    cache.targets.push_back(s->gaze_yaw);
    cache.targets.push_back(s->gaze_pitch);
  }
  return cache;
}

InputCache build_input_cache(std::span<const Sample> samples, std::size_t times) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return build_input_cache(std::span<const Sample* const>(ptrs), times);
}

template <typename T>
GazeBatch<T> make_batch(const InputCache& cache, std::span<const std::size_t> indices) {
  GazeBatch<T> batch;
  const std::size_t pixels = cache.height * cache.width;
  batch.reserve(indices.size(), cache.height, cache.width);
  batch.size = indices.size();
  batch.downsampled = cache.downsampled;
  for (std::size_t i : indices) {
    const float* img = cache.images.data() + i * pixels;
    batch.images.insert(batch.images.end(), img, img + pixels);
    batch.heads.push_back(static_cast<T>(cache.heads[2 * i]));
    batch.heads.push_back(static_cast<T>(cache.heads[2 * i + 1]));
    batch.targets.push_back(static_cast<T>(cache.targets[2 * i]));
    batch.targets.push_back(static_cast<T>(cache.targets[2 * i + 1]));
  }
  return batch;
}

template GazeBatch<float> make_batch<float>(const InputCache&, std::span<const std::size_t>);
template GazeBatch<double> make_batch<double>(const InputCache&, std::span<const std::size_t>);
template GazeBatch<float> make_batch<float>(std::span<const Sample* const>);
template GazeBatch<double> make_batch<double>(std::span<const Sample* const>);
template GazeBatch<float> make_batch<float>(std::span<const Sample>,
                                            std::span<const std::size_t>);
template GazeBatch<double> make_batch<double>(std::span<const Sample>,
                                              std::span<const std::size_t>);

}  // namespace gazefl
