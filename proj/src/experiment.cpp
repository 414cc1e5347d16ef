#include "gazefl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "gazefl/checkpoint.hpp"
#include "gazefl/seeding.hpp"

namespace gazefl {
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

fs::path seed_dir(const RunConfig& config, const fs::path& out, std::uint64_t seed) {
  const fs::path dir = config.seeds.size() > 1 ? out / ("seed-" + std::to_string(seed)) : out;
  fs::create_directories(dir);
  return dir;
}

TrainingConfig for_seed(const RunConfig& config, std::uint64_t seed) {
  TrainingConfig t = config.training;
  t.seed = seed;
  return t;
}

void write_models(const fs::path& dir, const TrainingResult<float>& result,
                  const TrainingConfig& training, std::uint64_t config_hash) {
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    Checkpoint ckpt;
    ckpt.header.mode = to_string(training.mode);
    ckpt.header.round = result.reports.size();
    ckpt.header.seed = training.seed;
    ckpt.header.config_hash = config_hash;
    ckpt.params = result.models[i];
    std::string name = "model.ckpt";
    if (training.mode == TrainingMode::Individual) {
      ckpt.header.participant = result.model_ids[i];
      name = "participant-" + std::to_string(result.model_ids[i]) + ".ckpt";
    }
    write_checkpoint(dir / name, ckpt);
  }
}

void write_metrics(const fs::path& path, std::span<const RoundReport> reports) {
  auto out = open_out(path);
  write_metrics_csv(out, reports);
}

void write_report(const fs::path& path, const EvalResult& eval) {
  auto out = open_out(path);
  write_report_csv(out, eval);
}

std::string join_ids(std::span<const std::uint16_t> ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) s += ";";
    s += std::to_string(ids[i]);
  }
  return s;
}

void write_resolved(const RunConfig& config, const fs::path& out) {
  fs::create_directories(out);
  auto f = open_out(out / "config.resolved");
  f << format_config(config);
}

// Worker count does not change results, so it is left out of the hash.
std::uint64_t config_hash(RunConfig config) {
  config.training.threads = 1;
  return fnv1a64(format_config(config));
}

}  // namespace

Federation load_or_synthesize(const RunConfig& config) {
  Federation fed;
  if (!config.data_path.empty()) {
    fed.participants = load_federation(config.data_path);
    fed.availability.assign(fed.participants.size(), 1.0);
    return fed;
  }
  const auto skews = make_skew_configs(config.synth);
  for (std::size_t i = 0; i < skews.size(); ++i) {
    fed.participants.push_back(synth_participant(skews[i], static_cast<std::uint16_t>(i)));
    fed.availability.push_back(skews[i].availability);
  }
  return fed;
}

std::vector<std::uint16_t> pick_noisy(std::span<const ParticipantDataset> federation,
                                      double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("noise fraction must lie in [0, 1]");
  }
  const auto count = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(federation.size()) + 0.5));
  std::vector<std::uint16_t> ids;
  for (const auto& ds : federation) ids.push_back(ds.id);
  std::mt19937_64 rng(derive_seed(seed, {tag(Stream::NoisyPick)}));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(std::min(count, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<ParticipantDataset> with_noise(std::span<const ParticipantDataset> federation,
                                           std::span<const std::uint16_t> noisy, double sigma,
                                           std::uint64_t seed) {
  std::vector<ParticipantDataset> out;
  out.reserve(federation.size());
  for (const auto& ds : federation) {
    if (std::find(noisy.begin(), noisy.end(), ds.id) != noisy.end()) {
      out.push_back(inject_noise(ds, sigma, derive_seed(seed, {tag(Stream::Noise), ds.id})));
    } else {
      out.push_back(ds);
    }
  }
  return out;
}

std::vector<double> LooOutcome::mean_curve(double RoundReport::*field) const {
  std::vector<double> curve;
  if (legs.empty()) return curve;
  const std::size_t rounds = legs.front().result.reports.size();
  for (std::size_t r = 0; r < rounds; ++r) {
    double sum = 0.0;
    for (const auto& leg : legs) sum += leg.result.reports.at(r).*field;
    curve.push_back(sum / static_cast<double>(legs.size()));
  }
  return curve;
}

LooOutcome run_leave_one_out(const TrainingConfig& config,
                             std::span<const ParticipantDataset> training,
                             std::span<const ParticipantDataset> testing,
                             std::span<const std::uint16_t> held_out,
                             std::span<const double> availability) {
  if (training.size() != testing.size()) {
    throw std::invalid_argument("training and testing federations differ in size");
  }
  if (!availability.empty() && availability.size() != training.size()) {
    throw std::invalid_argument("availability list does not match participant count");
  }
  LooOutcome outcome;
  const HeldOutTrainer train = [&](std::span<const ParticipantDataset> rest,
                                   const ParticipantDataset& left_out) {
    std::vector<double> weights;
    if (!availability.empty()) {
      for (std::size_t i = 0; i < training.size(); ++i) {
        if (training[i].id != left_out.id) weights.push_back(availability[i]);
      }
    }
    const auto it = std::find_if(testing.begin(), testing.end(),
                                 [&left_out](const auto& ds) { return ds.id == left_out.id; });
    if (it == testing.end()) {
      throw std::invalid_argument("participant " + std::to_string(left_out.id) +
                                  " missing from the test federation");
    }
    std::vector<const Sample*> test;
    for (const auto& s : it->samples) test.push_back(&s);
    const auto clients = make_clients(rest, config, weights);
    LegOutcome leg;
    leg.held_out = left_out.id;
    leg.result = run_training<float>(config, clients, test);
    leg.error = leg.result.reports.back().mae_deg;
    outcome.legs.push_back(std::move(leg));
    return outcome.legs.back().error;
  };
  outcome.eval = leave_one_out(train, training, config.mode, held_out);
  return outcome;
}

std::vector<RobustnessRow> robustness_sweep(const TrainingConfig& config,
                                            std::span<const ParticipantDataset> federation,
                                            std::span<const double> fractions, double sigma,
                                            std::span<const std::uint16_t> held_out,
                                            std::span<const double> availability,
                                            const LooOutcome* clean) {
  TrainingConfig fedadam = config;
  fedadam.mode = TrainingMode::FedAdam;
  LooOutcome clean_run;
  if (clean == nullptr) {
    clean_run = run_leave_one_out(fedadam, federation, federation, held_out, availability);
    clean = &clean_run;
  }
  std::vector<RobustnessRow> rows;
  for (double f : fractions) {
    RobustnessRow row;
    row.fraction = f;
    row.noisy = pick_noisy(federation, f, fedadam.seed);
    if (row.noisy.empty()) {
      row.outcome = *clean;
    } else {
      const auto noisy = with_noise(federation, row.noisy, sigma, fedadam.seed);
      row.outcome = run_leave_one_out(fedadam, noisy, federation, held_out, availability);
    }
    row.clean_error = clean->eval.mean;
    row.converged = smoothed_non_increasing(row.outcome.mean_curve(&RoundReport::test_loss));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_robustness_csv(std::ostream& out, std::span<const RobustnessRow> rows) {
  out << kRobustnessHeader << "\n";
  for (const auto& r : rows) {
    out << num(r.fraction) << "," << r.noisy.size() << "," << join_ids(r.noisy) << ","
        << num(r.outcome.eval.mean) << "," << num(r.clean_error) << ","
        << num(r.outcome.eval.mean / r.clean_error) << "," << (r.converged ? 1 : 0) << "\n";
  }
}

void run_synth_command(const RunConfig& config, const fs::path& out, std::ostream& log) {
  write_resolved(config, out);
  const auto skews = make_skew_configs(config.synth);
  std::vector<ParticipantDataset> fed;
  for (std::size_t i = 0; i < skews.size(); ++i) {
    fed.push_back(synth_participant(skews[i], static_cast<std::uint16_t>(i)));
    char name[32];
    std::snprintf(name, sizeof(name), "p%03zu.gzfl", i);
    write_participant(out / name, fed.back());
  }
  {
    auto f = open_out(out / "skew.cfg");
    write_skew_configs(f, skews);
  }
  {
    auto f = open_out(out / "stats.csv");
    write_stats_csv(f, partition_stats(fed));
  }
  log << "wrote " << fed.size() << " participants to " << out.string() << "\n";
}

void run_stats_command(const RunConfig& config, const fs::path& out, std::ostream& log) {
  write_resolved(config, out);
  const auto fed = load_or_synthesize(config);
  auto f = open_out(out / "stats.csv");
  write_stats_csv(f, partition_stats(fed.participants));
  log << "stats for " << fed.participants.size() << " participants in "
      << (out / "stats.csv").string() << "\n";
}

void run_train_command(const RunConfig& config, const fs::path& out, std::ostream& log) {
  write_resolved(config, out);
  const auto hash = config_hash(config);
  const auto fed = load_or_synthesize(config);
  for (std::uint64_t seed : config.seeds) {
    const auto dir = seed_dir(config, out, seed);
    const auto training = for_seed(config, seed);
    const auto noisy_ids = pick_noisy(fed.participants, config.noise_fraction, seed);
    const auto data = with_noise(fed.participants, noisy_ids, config.noise_sigma, seed);
    const auto clients = make_clients(data, training, fed.availability);
    const auto result = run_training<float>(training, clients);
    write_metrics(dir / "metrics.csv", result.reports);
    write_models(dir, result, training, hash);
    const auto clean_clients = make_clients(fed.participants, training, fed.availability);
    const auto eval =
        eval_person_specific(result_predictor(result), clean_clients, training.mode);
    write_report(dir / "report.csv", eval);
    log << "seed " << seed << ": " << to_string(training.mode) << ", "
        << result.reports.size() << " rounds, person-specific mean " << num(eval.mean)
        << " deg (min " << num(eval.min) << ", max " << num(eval.max) << ")\n";
  }
}

void run_eval_command(const RunConfig& config, const fs::path& out, std::ostream& log,
                      const fs::path& checkpoint) {
  if (!checkpoint.empty()) {
    write_resolved(config, out);
    const auto ckpt = read_checkpoint(checkpoint);
    if (ckpt.params.size() != config.training.arch.param_count()) {
      throw std::runtime_error("checkpoint holds " + std::to_string(ckpt.params.size()) +
                               " parameters; the configured model has " +
                               std::to_string(config.training.arch.param_count()));
    }
    const auto fed = load_or_synthesize(config);
    auto training = for_seed(config, ckpt.header.seed);
    const auto clients = make_clients(fed.participants, training, fed.availability);
    const auto eval = eval_person_specific(params_predictor(training.arch, ckpt.params),
                                           clients, parse_mode(ckpt.header.mode));
    write_report(out / "report.csv", eval);
    log << "checkpoint " << checkpoint.string() << ": person-specific mean " << num(eval.mean)
        << " deg\n";
    return;
  }
  if (config.protocol == EvalProtocol::PersonSpecific) {
    run_train_command(config, out, log);
    return;
  }
  write_resolved(config, out);
  const auto hash = config_hash(config);
  const auto fed = load_or_synthesize(config);
  for (std::uint64_t seed : config.seeds) {
    const auto dir = seed_dir(config, out, seed);
    const auto training = for_seed(config, seed);
    const auto noisy_ids = pick_noisy(fed.participants, config.noise_fraction, seed);
    const auto data = with_noise(fed.participants, noisy_ids, config.noise_sigma, seed);
    const auto outcome = run_leave_one_out(training, data, fed.participants, config.held_out,
                                           fed.availability);
    for (const auto& leg : outcome.legs) {
      const auto leg_dir = dir / ("leg-" + std::to_string(leg.held_out));
      fs::create_directories(leg_dir);
      write_metrics(leg_dir / "metrics.csv", leg.result.reports);
      write_models(leg_dir, leg.result, training, hash);
    }
    write_report(dir / "report.csv", outcome.eval);
    log << "seed " << seed << ": " << to_string(training.mode) << " leave-one-out over "
        << outcome.legs.size() << " participants, mean " << num(outcome.eval.mean)
        << " deg (min " << num(outcome.eval.min) << ", max " << num(outcome.eval.max)
        << ")\n";
  }
}

void run_robustness_command(const RunConfig& config, const fs::path& out, std::ostream& log) {
  write_resolved(config, out);
  const auto fed = load_or_synthesize(config);
  for (std::uint64_t seed : config.seeds) {
    const auto dir = seed_dir(config, out, seed);
    const auto training = for_seed(config, seed);
    const auto rows =
        robustness_sweep(training, fed.participants, config.robustness_fractions,
                         config.noise_sigma, config.held_out, fed.availability);
    {
      auto f = open_out(dir / "robustness.csv");
      write_robustness_csv(f, rows);
    }
    for (const auto& r : rows) {
      char name[48];
      std::snprintf(name, sizeof(name), "report-f%.2f.csv", r.fraction);
      write_report(dir / name, r.outcome.eval);
      log << "seed " << seed << ": fraction " << num(r.fraction) << " (" << r.noisy.size()
          << " noisy) mean " << num(r.outcome.eval.mean) << " deg, clean "
          << num(r.clean_error) << " deg" << (r.converged ? "" : ", not converged") << "\n";
    }
  }
}

}  // namespace gazefl
