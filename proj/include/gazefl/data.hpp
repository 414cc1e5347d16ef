#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazefl/gaze_net.hpp"

namespace gazefl {

inline constexpr std::size_t kEyeHeight = 36;
inline constexpr std::size_t kEyeWidth = 60;
inline constexpr std::size_t kEyePixels = kEyeHeight * kEyeWidth;

// One normalized observation. `eye` is row-major, 36 rows x 60 columns.
struct Sample {
  std::vector<float> eye = std::vector<float>(kEyePixels, 0.0f);
  float head_pitch = 0.0f;
  float head_yaw = 0.0f;
  float gaze_yaw = 0.0f;
  float gaze_pitch = 0.0f;

  GazeAngles gaze() const { return {gaze_yaw, gaze_pitch}; }

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Provenance { Loaded, Synthetic, Noisy };

std::string to_string(Provenance p);

struct ParticipantDataset {
  std::uint16_t id = 0;
  std::vector<Sample> samples;
  Provenance provenance = Provenance::Synthetic;

  std::size_t size() const noexcept { return samples.size(); }
};

// Throws std::invalid_argument when a dataset is empty, has malformed eye
// images or non-finite / out-of-range angles.
void validate(const ParticipantDataset& ds);

// ---------------------------------------------------------------------------
// GZFL container (little-endian):
//   "GZFL" | u16 version=1 | u16 participant id | u32 sample count
//   then per sample 2160 f32 eye pixels, f32 head pitch, f32 head yaw,
//   f32 gaze yaw, f32 gaze pitch.

inline constexpr std::uint16_t kGzflVersion = 1;
inline constexpr std::size_t kGzflHeaderBytes = 12;
inline constexpr std::size_t kGzflRecordBytes = (kEyePixels + 4) * 4;

class GzflParseError : public std::runtime_error {
 public:
  GzflParseError(std::string message, std::uint64_t offset);
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class GzflTruncatedError : public GzflParseError {
 public:
  GzflTruncatedError(std::uint32_t expected, std::uint32_t actual, std::uint64_t offset);
  std::uint32_t expected() const noexcept { return expected_; }
  std::uint32_t actual() const noexcept { return actual_; }

 private:
  std::uint32_t expected_;
  std::uint32_t actual_;
};

void write_participant(std::ostream& out, const ParticipantDataset& ds);
void write_participant(const std::filesystem::path& path, const ParticipantDataset& ds);
ParticipantDataset read_participant(std::istream& in);
ParticipantDataset load_participant(const std::filesystem::path& path);

// Loads every *.gzfl file in `dir`, sorted by participant id.
std::vector<ParticipantDataset> load_federation(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic non-IID participants.

struct GazeBox {
  double yaw_min = -0.5;
  double yaw_max = 0.5;
  double pitch_min = -0.35;
  double pitch_max = 0.35;

  bool contains(double yaw, double pitch) const {
    return yaw >= yaw_min && yaw <= yaw_max && pitch >= pitch_min && pitch <= pitch_max;
  }

  friend bool operator==(const GazeBox&, const GazeBox&) = default;
};

struct SkewConfig {
  double brightness_offset = 0.0;  // feature skew
  double contrast_scale = 1.0;     // feature skew
  GazeBox gaze_box;                // label skew
  double style = 0.0;              // concept shift: same label, different features
  double label_offset_yaw = 0.0;   // concept shift: same features, different label
  double label_offset_pitch = 0.0;
  double availability = 1.0;       // violation of independence (cohort weight)
  std::uint32_t sample_count = 100;  // quantity imbalance
  double head_pitch_mean = 0.0;
  double head_yaw_mean = 0.0;
  double head_std = 0.1;
  std::uint64_t master_seed = 0;

  void validate() const;
  friend bool operator==(const SkewConfig&, const SkewConfig&) = default;
};

// Pixel-space placement of the iris blob for a gaze direction.
struct BlobGeometry {
  static constexpr double kCenterX = 29.5;
  static constexpr double kCenterY = 17.5;
  static constexpr double kPixelsPerRad = 30.0;
};

// Clean rendering of one eye image for `gaze`, before brightness/contrast.
std::vector<float> render_eye(GazeAngles gaze, double style);

// Recovers gaze from a clean rendering via the intensity-weighted centroid of
// the iris blob. Used to check that renderings encode their labels.
GazeAngles centroid_decode(std::span<const float> eye);

ParticipantDataset synth_participant(const SkewConfig& cfg, std::uint16_t id);

// Log-uniform sample counts in [min_count, max_count].
std::vector<std::uint32_t> imbalance_counts(std::size_t n_participants,
                                            std::uint32_t min_count,
                                            std::uint32_t max_count,
                                            std::uint64_t seed);

// Knobs for generating a whole heterogeneous federation.
struct FederationSpec {
  std::size_t participants = 15;
  std::uint32_t min_count = 150;
  std::uint32_t max_count = 3475;
  bool label_skew = true;
  bool feature_skew = true;
  bool style_skew = false;
  bool label_offset_skew = false;
  bool availability_skew = false;
  std::uint64_t seed = 1;

  static FederationSpec desk_scale() { return {}; }
  static FederationSpec full_scale() {
    FederationSpec spec;
    spec.min_count = 1498;
    spec.max_count = 34745;
    return spec;
  }
};

std::vector<SkewConfig> make_skew_configs(const FederationSpec& spec);
std::vector<ParticipantDataset> synth_federation(const FederationSpec& spec);

// key=value text form, one participant block per "[participant N]" header.
void write_skew_configs(std::ostream& out, std::span<const SkewConfig> configs);
std::vector<SkewConfig> read_skew_configs(std::istream& in);

// Adds N(0, sigma^2) to every eye pixel. Labels are untouched.
ParticipantDataset inject_noise(const ParticipantDataset& ds, double sigma,
                                std::uint64_t seed);

// ---------------------------------------------------------------------------
// Statistics.

inline constexpr std::size_t kHistogramBins = 16;
inline constexpr double kHistogramRange = 1.0;  // radians, both axes

struct ParticipantStats {
  std::uint16_t id = 0;
  std::size_t count = 0;
  double pixel_mean = 0.0;
  double pixel_std = 0.0;
  double yaw_mean = 0.0;
  double yaw_std = 0.0;
  double pitch_mean = 0.0;
  double pitch_std = 0.0;
};

struct PartitionStats {
  std::vector<ParticipantStats> participants;
  // Pairwise L1 distance between normalized 16x16 yaw-pitch histograms.
  std::vector<std::vector<double>> label_distance;
};

std::vector<double> label_histogram(const ParticipantDataset& ds);
PartitionStats partition_stats(std::span<const ParticipantDataset> federation);
void write_stats_csv(std::ostream& out, const PartitionStats& stats);

// ---------------------------------------------------------------------------
// Train/validation split and model batches.

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Seeded shuffle; validation gets round(fraction * n) samples, capped so
// training keeps at least one sample.
Split split_participant(std::size_t n, double validation_fraction, std::uint64_t seed);

// Model-ready copy of a sample list: eye images already halved `downsampled`
// times by 2x2 max pooling, head poses (pitch, yaw) and labels (yaw, pitch).
struct InputCache {
  std::size_t downsampled = 0;
  std::size_t height = kEyeHeight;
  std::size_t width = kEyeWidth;
  std::vector<float> images;
  std::vector<float> heads;
  std::vector<float> targets;

  std::size_t size() const noexcept { return heads.size() / 2; }
};

InputCache build_input_cache(std::span<const Sample* const> samples, std::size_t times);
InputCache build_input_cache(std::span<const Sample> samples, std::size_t times);

template <typename T>
GazeBatch<T> make_batch(const InputCache& cache, std::span<const std::size_t> indices);

template <typename T>
GazeBatch<T> make_batch(std::span<const Sample> samples,
                        std::span<const std::size_t> indices);

template <typename T>
GazeBatch<T> make_batch(std::span<const Sample* const> samples);

}  // namespace gazefl
