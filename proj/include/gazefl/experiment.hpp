#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "gazefl/config.hpp"
#include "gazefl/data.hpp"
#include "gazefl/evaluation.hpp"
#include "gazefl/federation.hpp"

namespace gazefl {

struct Federation {
  std::vector<ParticipantDataset> participants;
  std::vector<double> availability;  // cohort weight per participant
};

// GZFL directory from data.path, otherwise the synthetic federation.
Federation load_or_synthesize(const RunConfig& config);

// round(fraction * N) participant ids from a seeded permutation, ascending.
std::vector<std::uint16_t> pick_noisy(std::span<const ParticipantDataset> federation,
                                      double fraction, std::uint64_t seed);

// Copy of `federation` with inject_noise applied to the listed participants.
std::vector<ParticipantDataset> with_noise(std::span<const ParticipantDataset> federation,
                                           std::span<const std::uint16_t> noisy, double sigma,
                                           std::uint64_t seed);

struct LegOutcome {
  std::uint16_t held_out = 0;
  double error = 0.0;
  TrainingResult<float> result;  // reports track the held-out participant
};

struct LooOutcome {
  EvalResult eval;
  std::vector<LegOutcome> legs;

  // Per-round field of the reports averaged over legs.
  std::vector<double> mean_curve(double RoundReport::*field) const;
};

// Leave-one-out legs: train on `training` without the held-out participant,
// test on that participant's samples in `testing` (same ids; lets noisy
// training copies be scored on clean data).
LooOutcome run_leave_one_out(const TrainingConfig& config,
                             std::span<const ParticipantDataset> training,
                             std::span<const ParticipantDataset> testing,
                             std::span<const std::uint16_t> held_out = {},
                             std::span<const double> availability = {});

struct RobustnessRow {
  double fraction = 0.0;
  std::vector<std::uint16_t> noisy;
  LooOutcome outcome;
  double clean_error = 0.0;
  bool converged = false;  // smoothed_non_increasing on the mean test loss
};

// Fedadam leave-one-out runs with round(f * N) noisy participants per
// fraction. `clean`, when given, must be the fedadam run on clean data with
// the same config; rows with no noisy participant reuse it.
std::vector<RobustnessRow> robustness_sweep(const TrainingConfig& config,
                                            std::span<const ParticipantDataset> federation,
                                            std::span<const double> fractions, double sigma,
                                            std::span<const std::uint16_t> held_out = {},
                                            std::span<const double> availability = {},
                                            const LooOutcome* clean = nullptr);

inline constexpr const char* kRobustnessHeader =
    "fraction,n_noisy,noisy_ids,mean_error_deg,clean_error_deg,ratio,converged";

void write_robustness_csv(std::ostream& out, std::span<const RobustnessRow> rows);

// Command bodies behind the CLI. Each writes into `out` and logs progress.
void run_synth_command(const RunConfig& config, const std::filesystem::path& out,
                       std::ostream& log);
void run_stats_command(const RunConfig& config, const std::filesystem::path& out,
                       std::ostream& log);
void run_train_command(const RunConfig& config, const std::filesystem::path& out,
                       std::ostream& log);
void run_eval_command(const RunConfig& config, const std::filesystem::path& out,
                      std::ostream& log, const std::filesystem::path& checkpoint = {});
void run_robustness_command(const RunConfig& config, const std::filesystem::path& out,
                            std::ostream& log);

}  // namespace gazefl
