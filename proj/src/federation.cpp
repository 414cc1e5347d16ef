#include "gazefl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include "gazefl/seeding.hpp"

namespace gazefl {

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::Individual:
      return "individual";
    case TrainingMode::Central:
      return "central";
    case TrainingMode::FedAvg:
      return "fedavg";
    case TrainingMode::FedAdam:
      return "fedadam";
  }
  return "unknown";
}

TrainingMode parse_mode(std::string_view text) {
  if (text == "individual") return TrainingMode::Individual;
  if (text == "central") return TrainingMode::Central;
  if (text == "fedavg") return TrainingMode::FedAvg;
  if (text == "fedadam") return TrainingMode::FedAdam;
  throw std::invalid_argument("unknown training mode '" + std::string(text) +
                              "' (expected individual|central|fedavg|fedadam)");
}

void TrainingConfig::validate() const {
  if (rounds == 0) throw std::invalid_argument("rounds must be >= 1");
  if (local_epochs == 0) throw std::invalid_argument("local_epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(cohort_fraction > 0.0 && cohort_fraction <= 1.0)) {
    throw std::invalid_argument("cohort_fraction must lie in (0, 1]");
  }
  if (!(client_momentum >= 0.0 && client_momentum < 1.0)) {
    throw std::invalid_argument("client.momentum must lie in [0, 1)");
  }
  if (!(client_lr >= 0.0)) throw std::invalid_argument("client.lr must be >= 0");
  if (client_lr > 0.0) schedule().validate();
  AdamState<float>::zeros(0, server);
  if (threads == 0) throw std::invalid_argument("threads must be >= 1");
  arch.validate();
}

template <typename T>
ParamVector<T> ClientUpdate<T>::difference(std::span<const T> global) const {
  ParamVector<T> diff(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) diff[i] = global[i] - params[i];
  return diff;
}

ClientTrainingError::ClientTrainingError(std::uint32_t client_id, std::uint64_t round,
                                         const std::string& why)
    : std::runtime_error("client " + std::to_string(client_id) + " failed in round " +
                         std::to_string(round) + ": " + why),
      client_id_(client_id),
      round_(round) {}

namespace {

// One pass over `order` (indices into `inputs`) in mini-batches; returns the
// sample-weighted mean loss at the lookahead points.
template <typename T>
double run_epoch(GazeNet<T>& net, ParamVector<T>& params, SgdNesterovState<T>& state,
                 const InputCache& inputs, std::span<const std::size_t> order,
                 std::size_t batch_size, const ParamLayout& layout) {
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    const auto batch = make_batch<T>(inputs, order.subspan(start, end - start));
    double batch_loss = 0.0;
    sgd_nesterov_step<T>(
        params, state,
        [&](std::span<const T> lookahead) {
          net.set_params(lookahead);
          auto lg = loss_and_grad(net, batch);
          batch_loss = lg.loss;
          return std::move(lg.grad);
        },
        &layout);
    if (!std::isfinite(batch_loss)) throw NonFiniteError("loss", start);
    loss_sum += batch_loss * static_cast<double>(end - start);
  }
  return loss_sum / static_cast<double>(order.size());
}

std::shared_ptr<const InputCache> inputs_for(const ClientState& client,
                                             const Architecture& arch) {
  if (client.inputs && client.inputs->downsampled == arch.input_downsample &&
      client.inputs->size() == client.samples.size()) {
    return client.inputs;
  }
  return std::make_shared<const InputCache>(build_input_cache(client.samples, arch.input_downsample));
}

template <typename T>
void shuffle_with(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
}

std::vector<const Sample*> pointers(std::span<const Sample> samples,
                                    std::span<const std::size_t> indices) {
  std::vector<const Sample*> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(&samples[i]);
  return out;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

template <typename T>
ClientUpdate<T> local_train(const ClientState& client, const Architecture& arch,
                            std::span<const T> global, double lr, std::uint64_t round) {
  if (client.train.empty()) {
    throw ClientTrainingError(client.id, round, "empty training split");
  }
  GazeNet<T> net(arch);
  const auto layout = param_layout(arch);
  ParamVector<T> params(global.begin(), global.end());
  auto state = SgdNesterovState<T>::zeros(params.size(), lr, client.momentum);
  const auto inputs = inputs_for(client, arch);
  auto order = client.train;
  double loss_sum = 0.0;
  try {
    for (std::size_t epoch = 0; epoch < client.local_epochs; ++epoch) {
      shuffle_with(order, derive_seed(client.seed, {tag(Stream::LocalShuffle), client.id,
                                                    round, epoch}));
      loss_sum += run_epoch(net, params, state, *inputs, order, client.batch_size, layout);
    }
  } catch (const NonFiniteError& e) {
    throw ClientTrainingError(client.id, round, e.what());
  }
  ClientUpdate<T> update;
  update.client_id = client.id;
  update.params = std::move(params);
  update.num_samples = client.train.size();
  update.train_loss = loss_sum / static_cast<double>(client.local_epochs);
  return update;
}

template <typename T>
ServerState<T> ServerState<T>::create(TrainingMode mode, ParamVector<T> params,
                                      const TrainingConfig& config) {
  ServerState<T> server;
  server.mode = mode;
  server.params = std::move(params);
  if (mode == TrainingMode::FedAdam) {
    server.adam = AdamState<T>::zeros(server.params.size(), config.server);
  }
  server.cohort_fraction = config.cohort_fraction;
  server.cohort_rng.seed(derive_seed(config.seed, {tag(Stream::Cohort)}));
  server.schedule = config.schedule();
  return server;
}

std::size_t cohort_size(double fraction, std::size_t n_clients) {
  const auto rounded =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n_clients) + 0.5));
  return std::clamp<std::size_t>(rounded, 1, std::max<std::size_t>(n_clients, 1));
}

template <typename T>
std::vector<std::size_t> sample_cohort(ServerState<T>& server, std::size_t n_clients,
                                       std::span<const double> weights) {
  if (n_clients == 0) throw std::invalid_argument("sample_cohort needs at least one client");
  const std::size_t k = cohort_size(server.cohort_fraction, n_clients);
  std::vector<std::size_t> picked;
  if (weights.empty()) {
    std::vector<std::size_t> pool(n_clients);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> dist(i, n_clients - 1);
      std::swap(pool[i], pool[dist(server.cohort_rng)]);
    }
    picked.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    if (weights.size() != n_clients) {
      throw std::invalid_argument("availability weights do not match client count");
    }
    std::vector<double> w(weights.begin(), weights.end());
    for (std::size_t i = 0; i < k; ++i) {
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      std::size_t choice = 0;
      if (total > 0.0) {
        std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
        choice = dist(server.cohort_rng);
      } else {
        // Remaining clients all have zero weight: take the lowest free position.
        while (std::find(picked.begin(), picked.end(), choice) != picked.end()) ++choice;
      }
      picked.push_back(choice);
      w[choice] = 0.0;
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

template <typename T>
TestMetrics evaluate_params(const Architecture& arch, std::span<const T> params,
                            const InputCache& samples) {
  const std::size_t n = samples.size();
  if (n == 0) {
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  }
  GazeNet<T> net(arch);
  net.set_params(params);
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  double loss = 0.0, err = 0.0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    idx.resize(std::min(kChunk, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch<T>(samples, idx);
    const auto out = forward(net, batch);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double yaw = out[2 * i], pitch = out[2 * i + 1];
      const double true_yaw = samples.targets[2 * idx[i]];
      const double true_pitch = samples.targets[2 * idx[i] + 1];
      loss += std::abs(yaw - true_yaw) + std::abs(pitch - true_pitch);
      err += angular_error_deg({yaw, pitch}, {true_yaw, true_pitch});
    }
  }
  return {loss / static_cast<double>(n), err / static_cast<double>(n)};
}

template <typename T>
TestMetrics evaluate_params(const Architecture& arch, std::span<const T> params,
                            std::span<const Sample* const> samples) {
  return evaluate_params<T>(arch, params, build_input_cache(samples, arch.input_downsample));
}

template <typename T>
RoundReport run_round(ServerState<T>& server, std::span<const ClientState> clients,
                      const Architecture& arch, const RoundOptions& options,
                      const Evaluator<T>& evaluate) {
  if (clients.empty()) throw std::invalid_argument("run_round needs clients");
  std::vector<double> weights;
  if (options.use_availability) {
    for (const auto& c : clients) weights.push_back(c.availability);
  }
  const auto cohort = sample_cohort(server, clients.size(), weights);
  const double lr = server.schedule.lr_at_round(server.round);

  std::vector<std::optional<ClientUpdate<T>>> results(cohort.size());
  std::vector<std::exception_ptr> errors(cohort.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cohort.size(); i = next++) {
      try {
        results[i] = local_train<T>(clients[cohort[i]], arch, server.params, lr, server.round);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min(options.threads, cohort.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  RoundReport report;
  report.round = server.round;
  report.mode = server.mode;
  report.lr = lr;
  std::vector<WeightedParams<T>> updates;
  std::vector<double> losses;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    report.cohort.push_back(clients[cohort[i]].id);
    if (errors[i]) {
      if (!options.drop_on_failure) std::rethrow_exception(errors[i]);
      continue;
    }
    const auto& u = *results[i];
    updates.push_back({u.client_id, u.params, u.num_samples});
    losses.push_back(u.train_loss);
  }
  if (updates.empty()) {
    throw ClientTrainingError(report.cohort.front(), server.round,
                              "every cohort member failed");
  }

  if (server.mode == TrainingMode::FedAdam) {
    const auto grad = pseudo_gradient<T>(server.params, updates, options.weighting);
    adam_step<T>(server.params, *server.adam, grad);
  } else {
    server.params = fedavg_aggregate<T>(updates, options.weighting);
  }

  report.train_loss_mean = mean_of(losses);
  report.train_loss_min = *std::min_element(losses.begin(), losses.end());
  report.train_loss_max = *std::max_element(losses.begin(), losses.end());
  if (evaluate) {
    const auto m = evaluate(server.params);
    report.test_loss = m.loss;
    report.mae_deg = m.mae_deg;
  } else {
    report.test_loss = report.mae_deg = std::numeric_limits<double>::quiet_NaN();
  }
  server.round += 1;
  return report;
}

std::vector<ClientState> make_clients(std::span<const ParticipantDataset> federation,
                                      const TrainingConfig& config,
                                      std::span<const double> availability) {
  if (!availability.empty() && availability.size() != federation.size()) {
    throw std::invalid_argument("availability list does not match participant count");
  }
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < federation.size(); ++i) {
    const auto& ds = federation[i];
    ClientState c;
    c.id = ds.id;
    c.samples = ds.samples;
    c.inputs = std::make_shared<const InputCache>(
        build_input_cache(std::span<const Sample>(ds.samples), config.arch.input_downsample));
    auto split = split_participant(ds.size(), config.validation_fraction,
                                   derive_seed(config.seed, {tag(Stream::Split), ds.id}));
    c.train = std::move(split.train);
    c.validation = std::move(split.validation);
    c.local_epochs = config.local_epochs;
    c.batch_size = config.batch_size;
    c.momentum = config.client_momentum;
    c.availability = availability.empty() ? 1.0 : availability[i];
    c.seed = config.seed;
    clients.push_back(std::move(c));
  }
  return clients;
}

namespace {

template <typename T>
RoundReport summarize_epoch(std::uint64_t epoch, TrainingMode mode, double lr,
                            std::span<const ClientState> clients,
                            std::span<const double> losses) {
  RoundReport r;
  r.round = epoch;
  r.mode = mode;
  r.lr = lr;
  for (const auto& c : clients) r.cohort.push_back(c.id);
  r.train_loss_mean = mean_of(losses);
  r.train_loss_min = *std::min_element(losses.begin(), losses.end());
  r.train_loss_max = *std::max_element(losses.begin(), losses.end());
  return r;
}

std::vector<const Sample*> pooled_validation(std::span<const ClientState> clients) {
  std::vector<const Sample*> pool;
  for (const auto& c : clients) {
    auto v = pointers(c.samples, c.validation);
    pool.insert(pool.end(), v.begin(), v.end());
  }
  return pool;
}

template <typename T>
TrainingResult<T> train_individual(const TrainingConfig& config,
                                   std::span<const ClientState> clients,
                                   std::span<const Sample* const> test) {
  TrainingResult<T> result;
  result.arch = config.arch;
  const auto init = GazeNet<T>::init(config.arch, derive_seed(config.seed, {tag(Stream::Init)}));
  const auto layout = param_layout(config.arch);
  const auto schedule = config.schedule();
  GazeNet<T> net(config.arch);
  std::vector<SgdNesterovState<T>> states;
  std::vector<std::vector<std::size_t>> orders;
  std::vector<std::shared_ptr<const InputCache>> inputs;
  std::vector<InputCache> own_validation;
  for (const auto& c : clients) {
    result.model_ids.push_back(c.id);
    result.models.push_back(init.param_vector());
    states.push_back(SgdNesterovState<T>::zeros(init.param_count(), config.client_lr,
                                                config.client_momentum));
    orders.push_back(c.train);
    inputs.push_back(inputs_for(c, config.arch));
    own_validation.push_back(
        build_input_cache(pointers(c.samples, c.validation), config.arch.input_downsample));
  }
  const auto test_inputs = build_input_cache(test, config.arch.input_downsample);
  for (std::uint64_t epoch = 0; epoch < config.rounds; ++epoch) {
    const double lr = schedule.lr_at_round(epoch);
    std::vector<double> losses, test_loss, test_err;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      states[i].lr = lr;
      shuffle_with(orders[i], derive_seed(config.seed, {tag(Stream::LocalShuffle),
                                                        clients[i].id, epoch}));
      try {
        losses.push_back(run_epoch(net, result.models[i], states[i], *inputs[i], orders[i],
                                   config.batch_size, layout));
      } catch (const NonFiniteError& e) {
        throw ClientTrainingError(clients[i].id, epoch, e.what());
      }
      const auto metrics = evaluate_params<T>(config.arch, result.models[i],
                                              test.empty() ? own_validation[i] : test_inputs);
      if (!std::isnan(metrics.loss)) {
        test_loss.push_back(metrics.loss);
        test_err.push_back(metrics.mae_deg);
      }
    }
    auto report = summarize_epoch<T>(epoch, config.mode, lr, clients, losses);
    report.test_loss = test_loss.empty() ? std::nan("") : mean_of(test_loss);
    report.mae_deg = test_err.empty() ? std::nan("") : mean_of(test_err);
    result.reports.push_back(std::move(report));
  }
  return result;
}

template <typename T>
TrainingResult<T> train_central(const TrainingConfig& config,
                                std::span<const ClientState> clients,
                                std::span<const Sample* const> test) {
  TrainingResult<T> result;
  result.arch = config.arch;
  auto net = GazeNet<T>::init(config.arch, derive_seed(config.seed, {tag(Stream::Init)}));
  const auto layout = param_layout(config.arch);
  const auto schedule = config.schedule();
  auto params = net.param_vector();
  auto state = SgdNesterovState<T>::zeros(params.size(), config.client_lr,
                                          config.client_momentum);
  std::vector<const Sample*> train_samples;
  for (const auto& c : clients) {
    auto p = pointers(c.samples, c.train);
    train_samples.insert(train_samples.end(), p.begin(), p.end());
  }
  const auto train_inputs = build_input_cache(train_samples, config.arch.input_downsample);
  std::vector<std::size_t> pool(train_samples.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  const auto validation = pooled_validation(clients);
  const auto eval_set = build_input_cache(
      test.empty() ? std::span<const Sample* const>(validation) : test, config.arch.input_downsample);
  for (std::uint64_t epoch = 0; epoch < config.rounds; ++epoch) {
    state.lr = schedule.lr_at_round(epoch);
    shuffle_with(pool, derive_seed(config.seed, {tag(Stream::LocalShuffle), epoch}));
    double loss = 0.0;
    try {
      loss = run_epoch(net, params, state, train_inputs, pool, config.batch_size, layout);
    } catch (const NonFiniteError& e) {
      throw ClientTrainingError(0, epoch, std::string("central training: ") + e.what());
    }
    const std::vector<double> losses{loss};
    auto report = summarize_epoch<T>(epoch, config.mode, state.lr, clients, losses);
    const auto m = evaluate_params<T>(config.arch, params, eval_set);
    report.test_loss = m.loss;
    report.mae_deg = m.mae_deg;
    result.reports.push_back(std::move(report));
  }
  result.model_ids.push_back(0);
  result.models.push_back(std::move(params));
  return result;
}

template <typename T>
TrainingResult<T> train_federated(const TrainingConfig& config,
                                  std::span<const ClientState> clients,
                                  std::span<const Sample* const> test) {
  TrainingResult<T> result;
  result.arch = config.arch;
  const auto init = GazeNet<T>::init(config.arch, derive_seed(config.seed, {tag(Stream::Init)}));
  auto server = ServerState<T>::create(config.mode, init.param_vector(), config);
  const auto validation = pooled_validation(clients);
  const auto eval_set = build_input_cache(
      test.empty() ? std::span<const Sample* const>(validation) : test, config.arch.input_downsample);
  const Evaluator<T> evaluate = [&](std::span<const T> params) {
    return evaluate_params<T>(config.arch, params, eval_set);
  };
  const RoundOptions options{config.weighting, config.drop_on_failure,
                             config.use_availability, config.threads};
  for (std::size_t r = 0; r < config.rounds; ++r) {
    result.reports.push_back(run_round<T>(server, clients, config.arch, options, evaluate));
  }
  result.model_ids.push_back(0);
  result.models.push_back(std::move(server.params));
  return result;
}

}  // namespace

template <typename T>
TrainingResult<T> run_training(const TrainingConfig& config,
                               std::span<const ClientState> clients,
                               std::span<const Sample* const> test) {
  config.validate();
  if (clients.empty()) throw std::invalid_argument("run_training needs participants");
  switch (config.mode) {
    case TrainingMode::Individual:
      return train_individual<T>(config, clients, test);
    case TrainingMode::Central:
      return train_central<T>(config, clients, test);
    case TrainingMode::FedAvg:
    case TrainingMode::FedAdam:
      return train_federated<T>(config, clients, test);
  }
  throw std::invalid_argument("unknown training mode");
}

void write_metrics_csv(std::ostream& out, std::span<const RoundReport> reports) {
  out << kMetricsHeader << "\n";
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    out << r.round << "," << to_string(r.mode) << ",";
    for (std::size_t i = 0; i < r.cohort.size(); ++i) {
      if (i > 0) out << ";";
      out << r.cohort[i];
    }
    out << "," << num(r.lr) << "," << num(r.train_loss_mean) << "," << num(r.train_loss_min)
        << "," << num(r.train_loss_max) << "," << num(r.test_loss) << "," << num(r.mae_deg)
        << "\n";
  }
}

#define GAZEFL_INSTANTIATE_FEDERATION(T)                                                 \
  template struct ClientUpdate<T>;                                                       \
  template struct ServerState<T>;                                                        \
  template ClientUpdate<T> local_train<T>(const ClientState&, const Architecture&,       \
                                          std::span<const T>, double, std::uint64_t);    \
  template std::vector<std::size_t> sample_cohort<T>(ServerState<T>&, std::size_t,       \
                                                     std::span<const double>);           \
  template RoundReport run_round<T>(ServerState<T>&, std::span<const ClientState>,       \
                                    const Architecture&, const RoundOptions&,            \
                                    const Evaluator<T>&);                                \
  template TestMetrics evaluate_params<T>(const Architecture&, std::span<const T>,       \
                                          std::span<const Sample* const>);               \
  template TestMetrics evaluate_params<T>(const Architecture&, std::span<const T>,       \
                                          const InputCache&);                            \
  template TrainingResult<T> run_training<T>(const TrainingConfig&,                      \
                                             std::span<const ClientState>,               \
                                             std::span<const Sample* const>);

GAZEFL_INSTANTIATE_FEDERATION(float)
GAZEFL_INSTANTIATE_FEDERATION(double)

#undef GAZEFL_INSTANTIATE_FEDERATION

}  // namespace gazefl
