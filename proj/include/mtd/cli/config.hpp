#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtd/core/error.hpp"
#include "mtd/core/format.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/ersp/tf.hpp"
#include "mtd/eval/strategy.hpp"
#include "mtd/fc/connectivity.hpp"
#include "mtd/nn/hyper.hpp"
#include "mtd/synth/forward_model.hpp"
#include "mtd/tune/asha.hpp"
#include "mtd/tune/space.hpp"

// Run configuration: one JSON tree whose shape is fixed by the defaults below.
// A user file and `--set` overrides are merged over the defaults; any key the
// defaults do not have is rejected, and a value must keep its JSON type.

namespace mtd::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigFormatVersion = 1;

inline Json default_space_json() {
  const tune::SearchSpace s;
  Json acts = Json::array();
  for (auto a : s.activations) acts.push_back(std::string(nn::to_string(a)));
  return {{"learning_rate", {s.lr_lo, s.lr_hi}},
          {"batch_size", s.batch_sizes},
          {"conv_layers", s.conv_layers},
          {"filters", {s.filters_lo, s.filters_hi}},
          {"kernel_size", s.kernel_sizes},
          {"dropout", {s.dropout_lo, s.dropout_hi}},
          {"activation", acts},
          {"bias_reg", {s.bias_reg_lo, s.bias_reg_hi}},
          {"lstm_layers", s.lstm_layers},
          {"lstm_units", {s.units_lo, s.units_hi}},
          {"seq_len_steps", s.seq_len_steps},
          {"outputs", s.outputs}};
}

inline Json default_config() {
  const ersp::ErspConfig e;
  const fc::PermutationOptions p;
  const fc::EpochWindows w;
  Json bands = Json::array();
  for (const auto& b : bands::canonical()) bands.push_back(b.name);
  return {
      {"format_version", kConfigFormatVersion},
      {"seed", 0},
      {"workers", 1},
      {"synth",
       {{"participants", 1},
        {"sessions", 5},
        {"n_trials", 256},
        {"block_size", 16},
        {"snr", 1.0},
        {"session_drift", 0.0},
        {"carrier_band", "alpha"},
        {"montage", "fc32"},
        {"modality", "alternate"}}},
      {"ersp",
       {{"freqs_hz", e.freqs_hz},
        {"hop_s", e.hop_s},
        {"image_width", e.image_width},
        {"wavelet_cycles", e.wavelet_cycles},
        {"support_sigmas", e.support_sigmas},
        {"baseline", "log_mean"},
        {"montage", "online17"},
        {"steps", 125},
        {"history_steps", 5}}},
      {"hyper", nn::hyper_json(nn::HyperParams{})},
      {"train", {{"max_epochs", 12}, {"patience", 3}, {"val_fraction", 0.2}, {"pair_stride", 1}, {"per_axis", false}}},
      {"tune", {{"configs", 16}, {"rungs", {3, 6, 12}}, {"eta", 2}, {"space", default_space_json()}}},
      {"eval", {{"strategy", "WSR"}, {"folds", 5}, {"sessions", Json::array()}}},
      {"fc",
       {{"bands", bands},
        {"montage", "fc32"},
        {"n_perm", p.n_perm},
        {"alpha", p.alpha},
        {"display_threshold", p.display_threshold},
        {"window_s", p.window.length_s},
        {"overlap", p.window.overlap},
        {"epoch_s", w.length_s},
        {"task_offset_s", w.task_offset_s},
        {"base_offset_s", w.base_offset_s}}},
  };
}

namespace detail {

inline bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) return !(a.is_number_integer() || a.is_number_unsigned()) || b.is_number_integer() || b.is_number_unsigned();
  return a.type() == b.type();
}

inline std::string kind_name(const Json& j) {
  return j.is_number_integer() || j.is_number_unsigned() ? "integer" : j.type_name();
}

}  // namespace detail

/// Merges `over` into `base` in place. Objects merge key by key, everything
/// else is replaced whole. `path` names the location in error messages.
inline void merge_strict(Json& base, const Json& over, const std::string& path = "") {
  require(over.is_object(), ErrorKind::ConfigError, "config section '" + path + "' must be an object");
  for (const auto& [k, v] : over.items()) {
    const std::string at = path.empty() ? k : path + "." + k;
    require(base.contains(k), ErrorKind::ConfigError, "unknown config key '" + at + "'");
    Json& slot = base[k];
    if (slot.is_object()) {
      merge_strict(slot, v, at);
      continue;
    }
    require(detail::same_kind(slot, v), ErrorKind::ConfigError,
            "config key '" + at + "' expects " + detail::kind_name(slot) + ", got " + detail::kind_name(v));
    slot = v;
  }
}

/// Applies one `a.b.c=<json>` override. A value that does not parse as JSON is taken as a string.
inline void apply_override(Json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorKind::ConfigError, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
    parts.push_back(rest.substr(0, pos));
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = Json{{*it, patch}};
  merge_strict(cfg, patch);
}

inline Json load_config_file(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::ConfigError, "config file " + path.string() + " not found");
  Json j = Json::parse(fmt::read_file(path.string()), nullptr, false);
  require(!j.is_discarded(), ErrorKind::ConfigError, "config file " + path.string() + " is not valid JSON");
  return j;
}

/// Hash of the resolved configuration. The worker count is left out: it must not change results.
inline std::string config_hash(const Json& cfg) {
  Json c = cfg;
  c.erase("workers");
  return fmt::hex64(fnv1a64(c.dump()));
}

inline std::string section_hash(const Json& cfg, const std::string& section) {
  return fmt::hex64(fnv1a64(cfg.at(section).dump()));
}

// Typed views. Each getter reads from a resolved tree and validates.

inline std::uint64_t seed_of(const Json& c) { return c.at("seed").get<std::uint64_t>(); }

inline std::size_t workers_of(const Json& c) {
  const auto w = c.at("workers").get<long long>();
  require(w >= 1, ErrorKind::ConfigError, "workers must be >= 1");
  return static_cast<std::size_t>(w);
}

inline synth::ForwardModelConfig forward_model(const Json& c) {
  const Json& s = c.at("synth");
  synth::ForwardModelConfig f;
  f.snr = s.at("snr").get<double>();
  f.session_drift = s.at("session_drift").get<double>();
  f.carrier_band = bands::by_name(s.at("carrier_band").get<std::string>());
  f.seed = substream(seed_of(c), "data");
  f.validate();
  return f;
}

inline synth::ProtocolConfig protocol(const Json& c) {
  const Json& s = c.at("synth");
  synth::ProtocolConfig p;
  p.n_trials = s.at("n_trials").get<int>();
  p.block_size = s.at("block_size").get<int>();
  p.montage = montages::by_name(s.at("montage").get<std::string>());
  p.validate();
  return p;
}

inline ersp::ErspConfig ersp_config(const Json& c) {
  const Json& s = c.at("ersp");
  ersp::ErspConfig e;
  e.freqs_hz = s.at("freqs_hz").get<std::vector<double>>();
  e.hop_s = s.at("hop_s").get<double>();
  e.image_width = s.at("image_width").get<std::size_t>();
  e.wavelet_cycles = s.at("wavelet_cycles").get<double>();
  e.support_sigmas = s.at("support_sigmas").get<double>();
  const auto b = s.at("baseline").get<std::string>();
  require(b == "log_mean" || b == "mean", ErrorKind::ConfigError, "ersp.baseline must be log_mean or mean");
  e.baseline = b == "mean" ? ersp::BaselineMode::Mean : ersp::BaselineMode::LogMean;
  e.channels = montages::by_name(s.at("montage").get<std::string>()).channels();
  e.validate();
  return e;
}

inline ersp::FeatureOptions feature_options(const Json& c) {
  const Json& s = c.at("ersp");
  ersp::FeatureOptions o;
  o.grid.step_s = s.at("hop_s").get<double>();
  o.grid.steps = s.at("steps").get<std::size_t>();
  o.history_steps = s.at("history_steps").get<std::size_t>();
  o.workers = workers_of(c);
  return o;
}

inline eval::EvalOptions eval_options(const Json& c) {
  const Json& t = c.at("train");
  eval::EvalOptions o;
  o.hyper = nn::hyper_from_json(c.at("hyper"));
  o.train.max_epochs = t.at("max_epochs").get<int>();
  o.train.patience = t.at("patience").get<int>();
  o.train.val_fraction = t.at("val_fraction").get<double>();
  const auto stride = t.at("pair_stride").get<long long>();
  require(stride >= 1, ErrorKind::ConfigError, "train.pair_stride must be >= 1");
  require(o.train.max_epochs >= 1 && o.train.patience >= 1, ErrorKind::ConfigError,
          "train.max_epochs and train.patience must be >= 1");
  require(o.train.val_fraction > 0.0 && o.train.val_fraction < 1.0, ErrorKind::ConfigError,
          "train.val_fraction must lie in (0, 1)");
  o.pair_stride = static_cast<std::size_t>(stride);
  o.per_axis = t.at("per_axis").get<bool>();
  o.workers = workers_of(c);
  o.seed = substream(seed_of(c), "eval");
  return o;
}

inline tune::AshaOptions asha_options(const Json& c) {
  const Json& t = c.at("tune");
  tune::AshaOptions o;
  o.rungs = t.at("rungs").get<std::vector<int>>();
  o.eta = t.at("eta").get<int>();
  o.workers = workers_of(c);
  o.validate();
  return o;
}

inline tune::SearchSpace search_space(const Json& c) { return tune::space_from_json(c.at("tune").at("space")); }

inline fc::PermutationOptions permutation_options(const Json& c) {
  const Json& f = c.at("fc");
  fc::PermutationOptions p;
  p.n_perm = f.at("n_perm").get<std::size_t>();
  p.alpha = f.at("alpha").get<double>();
  p.display_threshold = f.at("display_threshold").get<double>();
  p.window.length_s = f.at("window_s").get<double>();
  p.window.overlap = f.at("overlap").get<double>();
  p.seed = substream(seed_of(c), "permutation");
  p.workers = workers_of(c);
  require(p.n_perm >= 1, ErrorKind::ConfigError, "fc.n_perm must be >= 1");
  require(p.alpha > 0.0 && p.alpha < 1.0, ErrorKind::ConfigError, "fc.alpha must lie in (0, 1)");
  require(p.window.length_s > 0.0 && p.window.overlap >= 0.0 && p.window.overlap < 1.0, ErrorKind::ConfigError,
          "fc window length must be positive and overlap in [0, 1)");
  return p;
}

inline fc::EpochWindows epoch_windows(const Json& c) {
  const Json& f = c.at("fc");
  fc::EpochWindows w;
  w.length_s = f.at("epoch_s").get<double>();
  w.task_offset_s = f.at("task_offset_s").get<double>();
  w.base_offset_s = f.at("base_offset_s").get<double>();
  require(w.length_s > 0.0, ErrorKind::ConfigError, "fc.epoch_s must be positive");
  return w;
}

inline std::vector<FrequencyBand> fc_bands(const Json& c) {
  std::vector<FrequencyBand> out;
  for (const auto& b : c.at("fc").at("bands")) out.push_back(bands::by_name(b.get<std::string>()));
  require(!out.empty(), ErrorKind::ConfigError, "fc.bands is empty");
  return out;
}

/// Checks every section by building its typed view once.
inline void validate_config(const Json& c) {
  require(c.at("format_version").get<int>() == kConfigFormatVersion, ErrorKind::ConfigError,
          "unsupported config format_version");
  workers_of(c);
  forward_model(c);
  protocol(c);
  const auto m = c.at("synth").at("modality").get<std::string>();
  require(m == "alternate" || m == "screen" || m == "vr", ErrorKind::ConfigError,
          "synth.modality must be alternate, screen or vr");
  require(c.at("synth").at("participants").get<int>() >= 1, ErrorKind::ConfigError, "synth.participants must be >= 1");
  const int sessions = c.at("synth").at("sessions").get<int>();
  require(sessions >= 1 && sessions <= 10, ErrorKind::ConfigError, "synth.sessions must lie in 1..10");
  ersp_config(c);
  eval_options(c);
  asha_options(c);
  search_space(c).validate();
  require(c.at("tune").at("configs").get<int>() >= 1, ErrorKind::ConfigError, "tune.configs must be >= 1");
  eval::parse_strategy(c.at("eval").at("strategy").get<std::string>());
  require(c.at("eval").at("folds").get<int>() >= 2, ErrorKind::ConfigError, "eval.folds must be >= 2");
  c.at("eval").at("sessions").get<std::vector<int>>();
  permutation_options(c);
  epoch_windows(c);
  fc_bands(c);
  montages::by_name(c.at("fc").at("montage").get<std::string>());
}

}  // namespace mtd::cli
