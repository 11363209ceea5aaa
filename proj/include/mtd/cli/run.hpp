#pragma once

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtd/cli/commands.hpp"

namespace mtd::cli {

/// Exit codes: 0 success, 2 configuration or usage error, 3 data or runtime error.
enum ExitCode { kOk = 0, kConfigError = 2, kDataError = 3 };

inline int exit_code_for(ErrorKind k) {
  return k == ErrorKind::ConfigError || k == ErrorKind::InvalidBand ? kConfigError : kDataError;
}

namespace detail {

// Options every subcommand accepts. Flag values, when given, land on top of the config file and `--set`.
struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<long long> workers;
};

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "Override a config value: key.path=<json> (repeatable)");
  app->add_option("--seed", c.seed, "Top-level seed");
  app->add_option("--workers", c.workers, "Worker threads; 1 is the deterministic reference mode");
}

template <class T>
void put(Json& cfg, const std::string& path, const std::optional<T>& v) {
  if (!v) return;
  Json patch = *v;
  std::vector<std::string> parts;
  std::string rest = path;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  merge_strict(cfg, patch);
}

}  // namespace detail

/// Parses argv, resolves the configuration and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Motion-trajectory decoding toolkit: synthetic sessions, ERSP features, CNN-LSTM decoders, "
               "ASHA tuning, evaluation strategies and EIC connectivity."};
  app.require_subcommand(1);
  detail::Common common;

  std::string out_dir, data_dir, features_dir, participant;
  std::vector<int> sessions;
  std::vector<std::string> bands_opt, inputs;
  std::optional<int> participants, n_sessions, trials, configs, folds;
  std::optional<double> snr, drift;
  std::optional<std::string> strategy;
  std::optional<std::size_t> n_perm;
  bool resume = false;

  auto* synth = app.add_subcommand("synth", "Generate synthetic session directories");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--participants", participants, "Number of participants");
  synth->add_option("--sessions", n_sessions, "Sessions per participant");
  synth->add_option("--trials", trials, "Trials per session");
  synth->add_option("--snr", snr, "Signal-to-noise ratio of the tuned sources");
  synth->add_option("--drift", drift, "Session-to-session drift of the tuning (0..1)");

  auto* ersp = app.add_subcommand("ersp", "Build ERSP feature files (cached by content hash)");
  ersp->add_option("--data", data_dir, "Directory written by synth")->required();
  ersp->add_option("--out", out_dir, "Feature directory (default <data>/features)");

  auto* train = app.add_subcommand("train", "Fit one decoder and write the model and its training report");
  auto* tune = app.add_subcommand("tune", "Run ASHA over sampled configurations");
  for (auto* c : {train, tune}) {
    c->add_option("--features", features_dir, "Feature directory")->required();
    c->add_option("--out", out_dir, "Output directory")->required();
    c->add_option("--participant", participant, "Participant id (needed when several are present)");
    c->add_option("--train-sessions", sessions, "Session indices to train on (default: the first)");
  }
  tune->add_option("--configs", configs, "Number of sampled configurations");
  tune->add_flag("--resume", resume, "Reuse completed results from an earlier tuning log");

  auto* evalc = app.add_subcommand("eval", "Evaluate a strategy (FDG, SAT or WSR)");
  evalc->add_option("--features", features_dir, "Feature directory")->required();
  evalc->add_option("--out", out_dir, "Output directory")->required();
  evalc->add_option("--participant", participant, "Restrict to one participant");
  evalc->add_option("--strategy", strategy, "FDG, SAT or WSR");
  evalc->add_option("--folds", folds, "Cross-validation folds for WSR");

  auto* fcc = app.add_subcommand("fc", "EIC connectivity with permutation testing");
  auto* topo = app.add_subcommand("topo", "Movement-minus-rest band power per channel");
  for (auto* c : {fcc, topo}) {
    c->add_option("--data", data_dir, "Directory written by synth")->required();
    c->add_option("--out", out_dir, "Output directory")->required();
    c->add_option("--bands", bands_opt, "Band names (default: all canonical bands)");
  }
  fcc->add_option("--n-perm", n_perm, "Permutations per band");

  auto* report = app.add_subcommand("report", "Merge evaluation files into a screen-versus-VR summary");
  report->add_option("inputs", inputs, "eval_*.json files")->required();
  report->add_option("--out", out_dir, "Output directory")->required();

  for (auto* c : {synth, ersp, train, tune, evalc, fcc, topo, report}) detail::add_common(c, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kConfigError;
  }
  // a subcommand's own --help
  for (auto* sub : app.get_subcommands())
    if (sub->get_help_ptr() && sub->get_help_ptr()->count()) {
      out << sub->help();
      return kOk;
    }

  try {
    Json cfg = default_config();
    if (!common.config.empty()) merge_strict(cfg, load_config_file(common.config));
    for (const auto& s : common.sets) apply_override(cfg, s);
    detail::put(cfg, "seed", common.seed);
    detail::put(cfg, "workers", common.workers);
    detail::put(cfg, "synth.participants", participants);
    detail::put(cfg, "synth.sessions", n_sessions);
    detail::put(cfg, "synth.n_trials", trials);
    detail::put(cfg, "synth.snr", snr);
    detail::put(cfg, "synth.session_drift", drift);
    detail::put(cfg, "tune.configs", configs);
    detail::put(cfg, "eval.strategy", strategy);
    detail::put(cfg, "eval.folds", folds);
    detail::put(cfg, "fc.n_perm", n_perm);
    if (!bands_opt.empty()) cfg["fc"]["bands"] = bands_opt;
    validate_config(cfg);

    Context ctx{cfg, config_hash(cfg), &out};
    if (*synth) return cmd_synth(ctx, out_dir);
    if (*ersp) return cmd_ersp(ctx, data_dir, out_dir.empty() ? fs::path(data_dir) / "features" : fs::path(out_dir));
    if (*train) return cmd_train(ctx, features_dir, out_dir, participant, sessions);
    if (*tune) return cmd_tune(ctx, features_dir, out_dir, participant, sessions, resume);
    if (*evalc) return cmd_eval(ctx, features_dir, out_dir, participant);
    if (*fcc) return cmd_fc(ctx, data_dir, out_dir);
    if (*topo) return cmd_topo(ctx, data_dir, out_dir);
    std::vector<fs::path> paths(inputs.begin(), inputs.end());
    return cmd_report(ctx, paths, out_dir);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error: invalid configuration value: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace mtd::cli
