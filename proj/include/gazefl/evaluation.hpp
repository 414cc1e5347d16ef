#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gazefl/data.hpp"
#include "gazefl/federation.hpp"
#include "gazefl/gaze_net.hpp"

namespace gazefl {

// Per-participant mean angular errors (degrees), sorted by participant id,
// with their unweighted mean and extremes.
struct EvalResult {
  TrainingMode mode = TrainingMode::FedAdam;
  std::vector<std::uint32_t> ids;
  std::vector<double> errors;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;

  // Throws std::invalid_argument on empty or mismatched input.
  static EvalResult from_errors(TrainingMode mode, std::vector<std::uint32_t> ids,
                                std::vector<double> errors);
};

// Gaze predictions for samples belonging to `participant`.
using Predictor = std::function<std::vector<GazeAngles>(
    std::uint32_t participant, std::span<const Sample* const> samples)>;

// One model for everybody.
Predictor params_predictor(const Architecture& arch, std::vector<float> params);

// Individual-mode results predict with the participant's own model; other
// modes with the single global model.
Predictor result_predictor(const TrainingResult<float>& result);

double mean_angular_error(const Predictor& predictor, std::uint32_t participant,
                          std::span<const Sample* const> samples);

// Each participant's error on its own validation split. Throws
// std::invalid_argument when a participant has no validation samples.
EvalResult eval_person_specific(const Predictor& predictor,
                                std::span<const ClientState> clients, TrainingMode mode);

// Trains on `training` and returns the mean angular error on `held_out`.
using HeldOutTrainer = std::function<double(std::span<const ParticipantDataset> training,
                                            const ParticipantDataset& held_out)>;

// Leaves `held_out_id` out of training and scores the trained model on all of
// that participant's samples. Throws std::invalid_argument for fewer than two
// participants or an unknown id.
double eval_person_independent(const HeldOutTrainer& train,
                               std::span<const ParticipantDataset> federation,
                               std::uint16_t held_out_id);

// One eval_person_independent leg per id in `held_out` (every participant
// when empty).
EvalResult leave_one_out(const HeldOutTrainer& train,
                         std::span<const ParticipantDataset> federation, TrainingMode mode,
                         std::span<const std::uint16_t> held_out = {});

// Moving average of `curve` with a trailing window.
std::vector<double> moving_average(std::span<const double> curve, std::size_t window);

// Least-squares slope of `values` against their index.
double ls_slope(std::span<const double> values);

// True when every value is finite and the window-smoothed curve has a
// non-positive least-squares slope over its final `tail_fraction`.
bool smoothed_non_increasing(std::span<const double> curve, std::size_t window = 10,
                             double tail_fraction = 0.25);

// Population standard deviation of the last `count` values.
double tail_std(std::span<const double> values, std::size_t count);

inline constexpr const char* kReportHeader = "participant,mode,mean_error_deg";

// One row per participant followed by mean/min/max summary rows.
void write_report_csv(std::ostream& out, const EvalResult& result);

}  // namespace gazefl
