#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gazefl/data.hpp"
#include "gazefl/gaze_net.hpp"
#include "gazefl/optimizers.hpp"

namespace gazefl {

enum class TrainingMode { Individual, Central, FedAvg, FedAdam };

std::string to_string(TrainingMode mode);
// Throws std::invalid_argument for anything but individual|central|fedavg|fedadam.
TrainingMode parse_mode(std::string_view text);

struct TrainingConfig {
  TrainingMode mode = TrainingMode::FedAdam;
  std::uint64_t seed = 1;
  std::size_t rounds = 200;  // communication rounds, or epochs for individual/central
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  double cohort_fraction = 0.8;
  double client_lr = 1e-5;
  double client_momentum = 0.9;
  AdamConfig server;
  double lr_decay = 0.1;
  std::vector<std::uint64_t> milestones;
  Weighting weighting = Weighting::BySamples;
  bool drop_on_failure = false;
  bool use_availability = false;
  double validation_fraction = 0.1;
  std::size_t threads = 1;
  Architecture arch;

  LrSchedule schedule() const { return {client_lr, lr_decay, milestones}; }
  void validate() const;
};

// One participant as seen by the trainer: its samples, the train/validation
// split and the knobs of its local optimizer. `inputs`, when set, holds the
// samples in model-ready form (same indexing as `samples`).
struct ClientState {
  std::uint32_t id = 0;
  std::span<const Sample> samples;
  std::shared_ptr<const InputCache> inputs;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  double momentum = 0.9;
  double availability = 1.0;
  std::uint64_t seed = 0;
};

// What a client sends back after a round: its locally trained parameters,
// the number of training samples and its mean local loss. No sample data.
template <typename T>
struct ClientUpdate {
  std::uint32_t client_id = 0;
  ParamVector<T> params;
  std::uint64_t num_samples = 0;
  double train_loss = 0.0;

  // Local difference global - local.
  ParamVector<T> difference(std::span<const T> global) const;
};

class ClientTrainingError : public std::runtime_error {
 public:
  ClientTrainingError(std::uint32_t client_id, std::uint64_t round, const std::string& why);
  std::uint32_t client_id() const noexcept { return client_id_; }
  std::uint64_t round() const noexcept { return round_; }

 private:
  std::uint32_t client_id_;
  std::uint64_t round_;
};

// Runs E epochs of mini-batch SGD with Nesterov momentum from `global` over
// a seeded shuffle of the client's training split. Velocity starts at zero.
template <typename T>
ClientUpdate<T> local_train(const ClientState& client, const Architecture& arch,
                            std::span<const T> global, double lr, std::uint64_t round);

struct RoundReport {
  std::uint64_t round = 0;
  TrainingMode mode = TrainingMode::FedAdam;
  std::vector<std::uint32_t> cohort;
  double lr = 0.0;
  double train_loss_mean = 0.0;
  double train_loss_min = 0.0;
  double train_loss_max = 0.0;
  double test_loss = 0.0;
  double mae_deg = 0.0;
};

template <typename T>
struct ServerState {
  TrainingMode mode = TrainingMode::FedAdam;
  std::uint64_t round = 0;
  ParamVector<T> params;
  std::optional<AdamState<T>> adam;
  double cohort_fraction = 0.8;
  std::mt19937_64 cohort_rng;
  LrSchedule schedule;

  static ServerState create(TrainingMode mode, ParamVector<T> params,
                            const TrainingConfig& config);
};

std::size_t cohort_size(double fraction, std::size_t n_clients);

// Positions (into the client list) of this round's cohort, ascending. Uniform
// without replacement, or availability-weighted without replacement when
// `weights` is non-empty.
template <typename T>
std::vector<std::size_t> sample_cohort(ServerState<T>& server, std::size_t n_clients,
                                       std::span<const double> weights = {});

struct TestMetrics {
  double loss = 0.0;
  double mae_deg = 0.0;
};

template <typename T>
using Evaluator = std::function<TestMetrics(std::span<const T>)>;

struct RoundOptions {
  Weighting weighting = Weighting::BySamples;
  bool drop_on_failure = false;
  bool use_availability = false;
  std::size_t threads = 1;
};

template <typename T>
RoundReport run_round(ServerState<T>& server, std::span<const ClientState> clients,
                      const Architecture& arch, const RoundOptions& options,
                      const Evaluator<T>& evaluate = {});

// Mean L1 loss and mean angular error of `params` on `samples`.
template <typename T>
TestMetrics evaluate_params(const Architecture& arch, std::span<const T> params,
                            std::span<const Sample* const> samples);

template <typename T>
TestMetrics evaluate_params(const Architecture& arch, std::span<const T> params,
                            const InputCache& samples);

template <typename T>
struct TrainingResult {
  Architecture arch;
  std::vector<std::uint32_t> model_ids;  // participant per model (individual mode)
  std::vector<ParamVector<T>> models;
  std::vector<RoundReport> reports;
};

// Builds one ClientState per participant with the configured seeded split.
std::vector<ClientState> make_clients(std::span<const ParticipantDataset> federation,
                                      const TrainingConfig& config,
                                      std::span<const double> availability = {});

// Trains in the configured mode. Each report's test metrics are measured on
// `test` when it is non-empty, otherwise on the pooled validation splits
// (individual mode: every model on its own validation split, averaged).
template <typename T>
TrainingResult<T> run_training(const TrainingConfig& config,
                               std::span<const ClientState> clients,
                               std::span<const Sample* const> test = {});

inline constexpr const char* kMetricsHeader =
    "round,mode,cohort,lr,train_loss_mean,train_loss_min,train_loss_max,test_loss,mae_deg";

void write_metrics_csv(std::ostream& out, std::span<const RoundReport> reports);

}  // namespace gazefl
