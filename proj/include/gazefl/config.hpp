#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gazefl/data.hpp"
#include "gazefl/federation.hpp"

namespace gazefl {

// Bad key, bad value or inconsistent settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EvalProtocol { LeaveOneOut, Single, PersonSpecific };

std::string to_string(EvalProtocol p);

struct RunConfig {
  TrainingConfig training;  // training.seed mirrors seeds.front()
  std::vector<std::uint64_t> seeds{1};
  std::string model_profile = "lenet";
  std::string data_path;  // empty: synthetic federation from `synth`
  FederationSpec synth = FederationSpec::desk_scale();
  double noise_fraction = 0.0;
  double noise_sigma = 0.5;
  EvalProtocol protocol = EvalProtocol::LeaveOneOut;
  std::vector<std::uint16_t> held_out;  // empty: every participant
  std::vector<double> robustness_fractions{0.0, 0.3, 0.7};

  // Throws ConfigError when a referenced path is missing or a value is out
  // of range.
  void validate() const;
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

// key=value lines; blank lines and lines starting with '#' are skipped.
ConfigEntries parse_config_text(std::string_view text, std::string_view source = "config");

// Applies entries over the defaults. Later entries win over earlier ones.
RunConfig resolve_config(const ConfigEntries& entries);

// Canonical text form; resolve_config(parse_config_text(format_config(c)))
// reproduces c.
std::string format_config(const RunConfig& config);

// Every accepted key, in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace gazefl
