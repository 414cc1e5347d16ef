#include "gazefl/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "gazefl/config.hpp"
#include "gazefl/experiment.hpp"

namespace gazefl {
namespace {

struct CommonOptions {
  std::string config_file;
  std::string out;
  std::vector<std::string> sets;
  ConfigEntries shortcuts;
};

// Flags that are spelled-out forms of config keys.
void add_shortcut(CLI::App* cmd, CommonOptions& opts, const std::string& flag,
                  const std::string& key, const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&opts, key](const std::string& v) { opts.shortcuts.emplace_back(key, v); }, help);
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool needs_out) {
  cmd->add_option("--config", opts.config_file, "key=value config file")
      ->check(CLI::ExistingFile);
  auto* out = cmd->add_option("--out", opts.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--set", opts.sets, "override a config key (KEY=VALUE), repeatable");
  add_shortcut(cmd, opts, "--mode", "mode", "individual|central|fedavg|fedadam");
  add_shortcut(cmd, opts, "--seed", "seed", "seed or comma-separated seeds");
  add_shortcut(cmd, opts, "--rounds", "rounds", "communication rounds / epochs");
  add_shortcut(cmd, opts, "--data", "data.path", "directory of GZFL files");
  add_shortcut(cmd, opts, "--participants", "data.synth.participants",
               "synthetic participant count");
  add_shortcut(cmd, opts, "--threads", "threads", "client worker threads");
}

RunConfig build_config(const CommonOptions& opts) {
  ConfigEntries entries;
  if (!opts.config_file.empty()) {
    std::ifstream in(opts.config_file);
    std::stringstream text;
    text << in.rdbuf();
    entries = parse_config_text(text.str(), opts.config_file);
  }
  entries.insert(entries.end(), opts.shortcuts.begin(), opts.shortcuts.end());
  for (const auto& s : opts.sets) {
    const auto parsed = parse_config_text(s, "--set");
    if (parsed.size() != 1) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
    entries.push_back(parsed.front());
  }
  auto config = resolve_config(entries);
  config.validate();
  return config;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated gaze estimation simulator"};
  app.name("gazefl");
  app.require_subcommand(1);

  CommonOptions synth_opts, stats_opts, train_opts, eval_opts, robust_opts;
  auto* synth = app.add_subcommand("synth", "write a synthetic federation as GZFL files");
  add_common(synth, synth_opts, true);
  add_shortcut(synth, synth_opts, "--scale", "data.synth.scale", "desk|full sample counts");

  auto* stats = app.add_subcommand("stats", "partition statistics of a federation");
  add_common(stats, stats_opts, true);

  auto* train = app.add_subcommand("train", "train on every participant");
  add_common(train, train_opts, true);

  auto* eval = app.add_subcommand("eval", "person-independent or person-specific evaluation");
  add_common(eval, eval_opts, true);
  add_shortcut(eval, eval_opts, "--protocol", "eval.protocol", "loo|single|specific");
  add_shortcut(eval, eval_opts, "--held-out", "eval.held_out", "held-out participant ids");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "score a saved model person-specifically")
      ->check(CLI::ExistingFile);

  auto* robust = app.add_subcommand("robustness", "fedadam under noisy participants");
  add_common(robust, robust_opts, true);
  add_shortcut(robust, robust_opts, "--fractions", "robustness.fractions",
               "comma-separated noisy fractions");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const bool known = name == "synth" || name == "stats" || name == "train" ||
                       name == "eval" || name == "robustness";
    if (!known) {
      err << "gazefl: unknown subcommand '" << name << "'\n\n" << app.help();
      return kExitUsage;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "gazefl: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) {
      run_synth_command(build_config(synth_opts), synth_opts.out, out);
    } else if (stats->parsed()) {
      run_stats_command(build_config(stats_opts), stats_opts.out, out);
    } else if (train->parsed()) {
      run_train_command(build_config(train_opts), train_opts.out, out);
    } else if (eval->parsed()) {
      run_eval_command(build_config(eval_opts), eval_opts.out, out, checkpoint);
    } else if (robust->parsed()) {
      run_robustness_command(build_config(robust_opts), robust_opts.out, out);
    }
  } catch (const ConfigError& e) {
    err << "gazefl: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "gazefl: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace gazefl
