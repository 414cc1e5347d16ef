#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "gazefl/data.hpp"
#include "gazefl/seeding.hpp"

namespace gazefl {
namespace {

// Full gaze range of the synthetic federation.
constexpr GazeBox kGlobalBox{-0.6, 0.6, -0.4, 0.4};
// Extent of a label-skewed participant box.
constexpr double kSkewBoxYaw = 0.6;
constexpr double kSkewBoxPitch = 0.4;

constexpr double kIrisDepth = 0.55;

double background_level(double style) { return 0.78 - 0.12 * style; }
double iris_width(double style) { return 2.5 + 1.5 * style; }

}  // namespace

void SkewConfig::validate() const {
  if (sample_count < 1) throw std::invalid_argument("skew config: sample_count must be >= 1");
  if (!(gaze_box.yaw_min < gaze_box.yaw_max) || !(gaze_box.pitch_min < gaze_box.pitch_max)) {
    throw std::invalid_argument("skew config: gaze box is empty");
  }
  if (!(availability >= 0.0)) throw std::invalid_argument("skew config: availability < 0");
  if (!(contrast_scale > 0.0)) throw std::invalid_argument("skew config: contrast must be > 0");
  if (!(head_std >= 0.0)) throw std::invalid_argument("skew config: head_std < 0");
  if (!(style >= 0.0 && style <= 1.0)) {
    throw std::invalid_argument("skew config: style must lie in [0, 1]");
  }
}

std::vector<float> render_eye(GazeAngles gaze, double style) {
  std::vector<float> eye(kEyePixels);
  const double cx = BlobGeometry::kCenterX + BlobGeometry::kPixelsPerRad * gaze.yaw;
  const double cy = BlobGeometry::kCenterY - BlobGeometry::kPixelsPerRad * gaze.pitch;
  const double width = iris_width(style);
  const double inv = 1.0 / (2.0 * width * width);
  const double bg = background_level(style);
  for (std::size_t y = 0; y < kEyeHeight; ++y) {
    for (std::size_t x = 0; x < kEyeWidth; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      eye[y * kEyeWidth + x] =
          static_cast<float>(bg - kIrisDepth * std::exp(-(dx * dx + dy * dy) * inv));
    }
  }
  return eye;
}

GazeAngles centroid_decode(std::span<const float> eye) {
  const float brightest = *std::max_element(eye.begin(), eye.end());
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t y = 0; y < kEyeHeight; ++y) {
    for (std::size_t x = 0; x < kEyeWidth; ++x) {
      const double w = brightest - eye[y * kEyeWidth + x];
      total += w;
      sx += w * static_cast<double>(x);
      sy += w * static_cast<double>(y);
    }
  }
  if (total <= 0.0) return {};
  return {(sx / total - BlobGeometry::kCenterX) / BlobGeometry::kPixelsPerRad,
          (BlobGeometry::kCenterY - sy / total) / BlobGeometry::kPixelsPerRad};
}

ParticipantDataset synth_participant(const SkewConfig& cfg, std::uint16_t id) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.master_seed, {tag(Stream::Synth), id}));
  std::uniform_real_distribution<double> yaw_dist(cfg.gaze_box.yaw_min, cfg.gaze_box.yaw_max);
  std::uniform_real_distribution<double> pitch_dist(cfg.gaze_box.pitch_min,
                                                    cfg.gaze_box.pitch_max);
  std::normal_distribution<double> head_noise(0.0, 1.0);

  ParticipantDataset ds;
  ds.id = id;
  ds.provenance = Provenance::Synthetic;
  ds.samples.reserve(cfg.sample_count);
  for (std::uint32_t i = 0; i < cfg.sample_count; ++i) {
    const GazeAngles gaze{yaw_dist(rng), pitch_dist(rng)};
    const double head_pitch = cfg.head_pitch_mean + cfg.head_std * head_noise(rng);
    const double head_yaw = cfg.head_yaw_mean + cfg.head_std * head_noise(rng);
    Sample s;
    s.eye = render_eye(gaze, cfg.style);
    for (auto& p : s.eye) {
      const double v = cfg.contrast_scale * (p - 0.5) + 0.5 + cfg.brightness_offset;
      p = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    s.head_pitch = static_cast<float>(head_pitch);
    s.head_yaw = static_cast<float>(head_yaw);
    s.gaze_yaw = static_cast<float>(gaze.yaw + cfg.label_offset_yaw);
    s.gaze_pitch = static_cast<float>(gaze.pitch + cfg.label_offset_pitch);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<SkewConfig> make_skew_configs(const FederationSpec& spec) {
  if (spec.participants == 0) throw std::invalid_argument("federation needs participants");
  const auto counts =
      imbalance_counts(spec.participants, spec.min_count, spec.max_count, spec.seed);
  std::mt19937_64 rng(derive_seed(spec.seed, {tag(Stream::SkewLayout)}));
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  std::vector<SkewConfig> configs(spec.participants);
  for (std::size_t i = 0; i < spec.participants; ++i) {
    auto& cfg = configs[i];
    cfg.master_seed = spec.seed;
    cfg.sample_count = counts[i];
    // Every knob is drawn whether or not it is enabled, so toggling one skew
    // leaves the others unchanged.
    const double box_yaw = uniform(kGlobalBox.yaw_min + kSkewBoxYaw / 2,
                                   kGlobalBox.yaw_max - kSkewBoxYaw / 2);
    const double box_pitch = uniform(kGlobalBox.pitch_min + kSkewBoxPitch / 2,
                                     kGlobalBox.pitch_max - kSkewBoxPitch / 2);
    const double brightness = uniform(-0.15, 0.15);
    const double contrast = uniform(0.8, 1.2);
    const double style = uniform(0.0, 1.0);
    const double offset_yaw = uniform(-0.05, 0.05);
    const double offset_pitch = uniform(-0.05, 0.05);
    const double availability = uniform(0.2, 1.0);
    cfg.head_pitch_mean = uniform(-0.15, 0.15);
    cfg.head_yaw_mean = uniform(-0.15, 0.15);
    cfg.head_std = 0.1;

    cfg.gaze_box = spec.label_skew
                       ? GazeBox{box_yaw - kSkewBoxYaw / 2, box_yaw + kSkewBoxYaw / 2,
                                 box_pitch - kSkewBoxPitch / 2, box_pitch + kSkewBoxPitch / 2}
                       : kGlobalBox;
    if (spec.feature_skew) {
      cfg.brightness_offset = brightness;
      cfg.contrast_scale = contrast;
    }
    cfg.style = spec.style_skew ? style : 0.5;
    if (spec.label_offset_skew) {
      cfg.label_offset_yaw = offset_yaw;
      cfg.label_offset_pitch = offset_pitch;
    }
    if (spec.availability_skew) cfg.availability = availability;
  }
  return configs;
}

std::vector<ParticipantDataset> synth_federation(const FederationSpec& spec) {
  const auto configs = make_skew_configs(spec);
  std::vector<ParticipantDataset> federation;
  federation.reserve(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    federation.push_back(synth_participant(configs[i], static_cast<std::uint16_t>(i)));
  }
  return federation;
}

void write_skew_configs(std::ostream& out, std::span<const SkewConfig> configs) {
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    out << "[participant " << i << "]\n"
        << "brightness_offset=" << num(c.brightness_offset) << "\n"
        << "contrast_scale=" << num(c.contrast_scale) << "\n"
        << "gaze_yaw_min=" << num(c.gaze_box.yaw_min) << "\n"
        << "gaze_yaw_max=" << num(c.gaze_box.yaw_max) << "\n"
        << "gaze_pitch_min=" << num(c.gaze_box.pitch_min) << "\n"
        << "gaze_pitch_max=" << num(c.gaze_box.pitch_max) << "\n"
        << "style=" << num(c.style) << "\n"
        << "label_offset_yaw=" << num(c.label_offset_yaw) << "\n"
        << "label_offset_pitch=" << num(c.label_offset_pitch) << "\n"
        << "availability=" << num(c.availability) << "\n"
        << "sample_count=" << c.sample_count << "\n"
        << "head_pitch_mean=" << num(c.head_pitch_mean) << "\n"
        << "head_yaw_mean=" << num(c.head_yaw_mean) << "\n"
        << "head_std=" << num(c.head_std) << "\n"
        << "master_seed=" << c.master_seed << "\n";
  }
}

std::vector<SkewConfig> read_skew_configs(std::istream& in) {
  std::vector<SkewConfig> configs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      configs.emplace_back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || configs.empty()) {
      throw std::invalid_argument("skew config line " + std::to_string(line_no) +
                                  ": expected key=value inside a [participant] block");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    auto& c = configs.back();
    const std::map<std::string, double*> reals = {
        {"brightness_offset", &c.brightness_offset},
        {"contrast_scale", &c.contrast_scale},
        {"gaze_yaw_min", &c.gaze_box.yaw_min},
        {"gaze_yaw_max", &c.gaze_box.yaw_max},
        {"gaze_pitch_min", &c.gaze_box.pitch_min},
        {"gaze_pitch_max", &c.gaze_box.pitch_max},
        {"style", &c.style},
        {"label_offset_yaw", &c.label_offset_yaw},
        {"label_offset_pitch", &c.label_offset_pitch},
        {"availability", &c.availability},
        {"head_pitch_mean", &c.head_pitch_mean},
        {"head_yaw_mean", &c.head_yaw_mean},
        {"head_std", &c.head_std}};
    try {
      if (auto it = reals.find(key); it != reals.end()) {
        *it->second = std::stod(value);
      } else if (key == "sample_count") {
        c.sample_count = static_cast<std::uint32_t>(std::stoul(value));
      } else if (key == "master_seed") {
        c.master_seed = std::stoull(value);
      } else {
        throw std::invalid_argument("unknown key");
      }
    } catch (const std::exception&) {
      throw std::invalid_argument("skew config line " + std::to_string(line_no) +
                                  ": bad entry '" + line + "'");
    }
  }
  for (const auto& c : configs) c.validate();
  return configs;
}

}  // namespace gazefl
