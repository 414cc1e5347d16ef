#include "gazefl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>

namespace gazefl {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
  throw ConfigError("config key '" + std::string(key) + "': expected " + std::string(want) +
                    ", got '" + std::string(value) + "'");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    bad_value(key, v, "a non-negative integer");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true|false");
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += num(items[i]);
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

std::string flag(bool b) { return b ? "true" : "false"; }

Architecture profile_arch(std::string_view name) {
  if (name == "lenet") return Architecture::lenet();
  if (name == "compact") return Architecture::compact();
  bad_value("model.profile", name, "lenet|compact");
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;  // empty: not echoed
};

// Raw mode strings are reconciled after all keys are applied.
struct ModeInputs {
  std::optional<std::string> mode;
  std::optional<std::string> optimizer;
};

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    auto add = [&k](std::string name, auto set, auto get) {
      k.push_back({std::move(name), set, get});
    };
    using RC = RunConfig;
    using SV = std::string_view;
    // Applied first so the keys below can refine them.
    add("model.profile",
        [](RC& c, SV v) {
          c.training.arch = profile_arch(v);
          c.model_profile = std::string(v);
        },
        [](const RC& c) { return c.model_profile; });
    add("data.synth.scale",
        [](RC& c, SV v) {
          FederationSpec preset;
          if (v == "desk") {
            preset = FederationSpec::desk_scale();
          } else if (v == "full") {
            preset = FederationSpec::full_scale();
          } else {
            bad_value("data.synth.scale", v, "desk|full");
          }
          c.synth.min_count = preset.min_count;
          c.synth.max_count = preset.max_count;
        },
        nullptr);
    add("mode", [](RC&, SV) {}, [](const RC& c) { return to_string(c.training.mode); });
    add("server.optimizer", [](RC&, SV) {},
        [](const RC& c) {
          return c.training.mode == TrainingMode::FedAvg ? std::string("fedavg")
                                                         : std::string("fedadam");
        });
    add("seed",
        [](RC& c, SV v) {
          c.seeds.clear();
          for (const auto& s : split_list(v)) c.seeds.push_back(to_u64("seed", s));
          if (c.seeds.empty()) bad_value("seed", v, "one or more integers");
          c.training.seed = c.seeds.front();
        },
        [](const RC& c) { return join(c.seeds); });
    add("rounds", [](RC& c, SV v) { c.training.rounds = to_u64("rounds", v); },
        [](const RC& c) { return std::to_string(c.training.rounds); });
    add("local_epochs", [](RC& c, SV v) { c.training.local_epochs = to_u64("local_epochs", v); },
        [](const RC& c) { return std::to_string(c.training.local_epochs); });
    add("batch_size", [](RC& c, SV v) { c.training.batch_size = to_u64("batch_size", v); },
        [](const RC& c) { return std::to_string(c.training.batch_size); });
    add("cohort_fraction",
        [](RC& c, SV v) { c.training.cohort_fraction = to_double("cohort_fraction", v); },
        [](const RC& c) { return num(c.training.cohort_fraction); });
    add("client.lr", [](RC& c, SV v) { c.training.client_lr = to_double("client.lr", v); },
        [](const RC& c) { return num(c.training.client_lr); });
    add("client.momentum",
        [](RC& c, SV v) { c.training.client_momentum = to_double("client.momentum", v); },
        [](const RC& c) { return num(c.training.client_momentum); });
    add("server.lr", [](RC& c, SV v) { c.training.server.lr = to_double("server.lr", v); },
        [](const RC& c) { return num(c.training.server.lr); });
    add("server.beta1", [](RC& c, SV v) { c.training.server.beta1 = to_double("server.beta1", v); },
        [](const RC& c) { return num(c.training.server.beta1); });
    add("server.beta2", [](RC& c, SV v) { c.training.server.beta2 = to_double("server.beta2", v); },
        [](const RC& c) { return num(c.training.server.beta2); });
    add("server.eps", [](RC& c, SV v) { c.training.server.eps = to_double("server.eps", v); },
        [](const RC& c) { return num(c.training.server.eps); });
    add("schedule.decay", [](RC& c, SV v) { c.training.lr_decay = to_double("schedule.decay", v); },
        [](const RC& c) { return num(c.training.lr_decay); });
    add("schedule.milestones",
        [](RC& c, SV v) {
          c.training.milestones.clear();
          for (const auto& s : split_list(v)) {
            c.training.milestones.push_back(to_u64("schedule.milestones", s));
          }
        },
        [](const RC& c) { return join(c.training.milestones); });
    add("aggregation.weighting",
        [](RC& c, SV v) {
          if (v == "samples") {
            c.training.weighting = Weighting::BySamples;
          } else if (v == "uniform") {
            c.training.weighting = Weighting::Uniform;
          } else {
            bad_value("aggregation.weighting", v, "samples|uniform");
          }
        },
        [](const RC& c) {
          return std::string(c.training.weighting == Weighting::BySamples ? "samples" : "uniform");
        });
    add("client.drop_on_failure",
        [](RC& c, SV v) { c.training.drop_on_failure = to_bool("client.drop_on_failure", v); },
        [](const RC& c) { return flag(c.training.drop_on_failure); });
    add("cohort.availability",
        [](RC& c, SV v) { c.training.use_availability = to_bool("cohort.availability", v); },
        [](const RC& c) { return flag(c.training.use_availability); });
    add("validation_fraction",
        [](RC& c, SV v) { c.training.validation_fraction = to_double("validation_fraction", v); },
        [](const RC& c) { return num(c.training.validation_fraction); });
    add("threads", [](RC& c, SV v) { c.training.threads = to_u64("threads", v); },
        [](const RC& c) { return std::to_string(c.training.threads); });
    add("model.input_downsample",
        [](RC& c, SV v) { c.training.arch.input_downsample = to_u64("model.input_downsample", v); },
        [](const RC& c) { return std::to_string(c.training.arch.input_downsample); });
    add("model.conv1_kernels",
        [](RC& c, SV v) { c.training.arch.conv1_kernels = to_u64("model.conv1_kernels", v); },
        [](const RC& c) { return std::to_string(c.training.arch.conv1_kernels); });
    add("model.conv1_size",
        [](RC& c, SV v) { c.training.arch.conv1_size = to_u64("model.conv1_size", v); },
        [](const RC& c) { return std::to_string(c.training.arch.conv1_size); });
    add("model.conv2_kernels",
        [](RC& c, SV v) { c.training.arch.conv2_kernels = to_u64("model.conv2_kernels", v); },
        [](const RC& c) { return std::to_string(c.training.arch.conv2_kernels); });
    add("model.conv2_size",
        [](RC& c, SV v) { c.training.arch.conv2_size = to_u64("model.conv2_size", v); },
        [](const RC& c) { return std::to_string(c.training.arch.conv2_size); });
    add("model.fc_units",
        [](RC& c, SV v) { c.training.arch.fc_units = to_u64("model.fc_units", v); },
        [](const RC& c) { return std::to_string(c.training.arch.fc_units); });
    add("noise.fraction", [](RC& c, SV v) { c.noise_fraction = to_double("noise.fraction", v); },
        [](const RC& c) { return num(c.noise_fraction); });
    add("noise.sigma", [](RC& c, SV v) { c.noise_sigma = to_double("noise.sigma", v); },
        [](const RC& c) { return num(c.noise_sigma); });
    add("data.path", [](RC& c, SV v) { c.data_path = std::string(v); },
        [](const RC& c) { return c.data_path; });
    add("data.synth.participants",
        [](RC& c, SV v) { c.synth.participants = to_u64("data.synth.participants", v); },
        [](const RC& c) { return std::to_string(c.synth.participants); });
    add("data.synth.min_count",
        [](RC& c, SV v) {
          c.synth.min_count = static_cast<std::uint32_t>(to_u64("data.synth.min_count", v));
        },
        [](const RC& c) { return std::to_string(c.synth.min_count); });
    add("data.synth.max_count",
        [](RC& c, SV v) {
          c.synth.max_count = static_cast<std::uint32_t>(to_u64("data.synth.max_count", v));
        },
        [](const RC& c) { return std::to_string(c.synth.max_count); });
    add("data.synth.label_skew",
        [](RC& c, SV v) { c.synth.label_skew = to_bool("data.synth.label_skew", v); },
        [](const RC& c) { return flag(c.synth.label_skew); });
    add("data.synth.feature_skew",
        [](RC& c, SV v) { c.synth.feature_skew = to_bool("data.synth.feature_skew", v); },
        [](const RC& c) { return flag(c.synth.feature_skew); });
    add("data.synth.style_skew",
        [](RC& c, SV v) { c.synth.style_skew = to_bool("data.synth.style_skew", v); },
        [](const RC& c) { return flag(c.synth.style_skew); });
    add("data.synth.label_offset_skew",
        [](RC& c, SV v) { c.synth.label_offset_skew = to_bool("data.synth.label_offset_skew", v); },
        [](const RC& c) { return flag(c.synth.label_offset_skew); });
    add("data.synth.availability_skew",
        [](RC& c, SV v) { c.synth.availability_skew = to_bool("data.synth.availability_skew", v); },
        [](const RC& c) { return flag(c.synth.availability_skew); });
    add("data.synth.seed", [](RC& c, SV v) { c.synth.seed = to_u64("data.synth.seed", v); },
        [](const RC& c) { return std::to_string(c.synth.seed); });
    add("eval.protocol",
        [](RC& c, SV v) {
          if (v == "loo") {
            c.protocol = EvalProtocol::LeaveOneOut;
          } else if (v == "single") {
            c.protocol = EvalProtocol::Single;
          } else if (v == "specific") {
            c.protocol = EvalProtocol::PersonSpecific;
          } else {
            bad_value("eval.protocol", v, "loo|single|specific");
          }
        },
        [](const RC& c) { return to_string(c.protocol); });
    add("eval.held_out",
        [](RC& c, SV v) {
          c.held_out.clear();
          for (const auto& s : split_list(v)) {
            const auto id = to_u64("eval.held_out", s);
            if (id > 0xFFFF) bad_value("eval.held_out", s, "a participant id below 65536");
            c.held_out.push_back(static_cast<std::uint16_t>(id));
          }
        },
        [](const RC& c) { return join(c.held_out); });
    add("robustness.fractions",
        [](RC& c, SV v) {
          c.robustness_fractions.clear();
          for (const auto& s : split_list(v)) {
            c.robustness_fractions.push_back(to_double("robustness.fractions", s));
          }
        },
        [](const RC& c) { return join(c.robustness_fractions); });
    return k;
  }();
  return keys;
}

}  // namespace

std::string to_string(EvalProtocol p) {
  switch (p) {
    case EvalProtocol::LeaveOneOut:
      return "loo";
    case EvalProtocol::Single:
      return "single";
    case EvalProtocol::PersonSpecific:
      return "specific";
  }
  return "unknown";
}

void RunConfig::validate() const {
  try {
    training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0)) {
    throw ConfigError("noise.fraction must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise.sigma must be >= 0");
  for (double f : robustness_fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("robustness.fractions must lie in [0, 1]");
  }
  if (!data_path.empty() && !std::filesystem::is_directory(data_path)) {
    throw ConfigError("data.path '" + data_path + "' is not a directory");
  }
  if (data_path.empty()) {
    if (synth.participants == 0) throw ConfigError("data.synth.participants must be >= 1");
    if (synth.min_count == 0 || synth.min_count > synth.max_count) {
      throw ConfigError("data.synth counts need 1 <= min_count <= max_count");
    }
  }
  if (protocol == EvalProtocol::Single && held_out.size() != 1) {
    throw ConfigError("eval.protocol=single needs exactly one eval.held_out id");
  }
}

ConfigEntries parse_config_text(std::string_view text, std::string_view source) {
  ConfigEntries entries;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const auto raw = text.substr(start, nl == std::string_view::npos ? text.npos : nl - start);
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(source) + ":" + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return entries;
}

RunConfig resolve_config(const ConfigEntries& entries) {
  const auto& table = key_table();
  std::map<std::string, std::string> last;
  for (const auto& [key, value] : entries) {
    const bool known = std::any_of(table.begin(), table.end(),
                                   [&key](const Key& k) { return k.name == key; });
    if (!known) throw ConfigError("unknown config key '" + key + "'");
    last[key] = value;
  }
  RunConfig config;
  ModeInputs modes;
  for (const auto& k : table) {
    const auto it = last.find(k.name);
    if (it == last.end()) continue;
    if (k.name == "mode") {
      modes.mode = it->second;
    } else if (k.name == "server.optimizer") {
      modes.optimizer = it->second;
    }
    k.set(config, it->second);
  }

  if (modes.optimizer && *modes.optimizer != "fedavg" && *modes.optimizer != "fedadam") {
    bad_value("server.optimizer", *modes.optimizer, "fedavg|fedadam");
  }
  const std::string mode = modes.mode.value_or(modes.optimizer.value_or("fedadam"));
  if (mode == "federated") {
    config.training.mode = parse_mode(modes.optimizer.value_or("fedadam"));
  } else {
    try {
      config.training.mode = parse_mode(mode);
    } catch (const std::invalid_argument&) {
      bad_value("mode", mode, "individual|central|fedavg|fedadam|federated");
    }
    const bool federated = config.training.mode == TrainingMode::FedAvg ||
                           config.training.mode == TrainingMode::FedAdam;
    if (federated && modes.optimizer && *modes.optimizer != mode) {
      throw ConfigError("mode=" + mode + " conflicts with server.optimizer=" + *modes.optimizer);
    }
  }
  return config;
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : key_table()) {
    if (!k.get) continue;
    out += k.name + "=" + k.get(config) + "\n";
  }
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : key_table()) n.push_back(k.name);
    return n;
  }();
  return names;
}

}  // namespace gazefl
