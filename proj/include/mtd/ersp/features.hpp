#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtd/core/error.hpp"
#include "mtd/core/format.hpp"
#include "mtd/core/kinematics.hpp"
#include "mtd/core/parallel.hpp"
#include "mtd/core/types.hpp"
#include "mtd/ersp/tf.hpp"

// Per-trial ERSP features and velocity labels.
//
// Frames are indexed relative to the trial's target onset: frame j sits at
// t_target + j * hop (snapped to the EEG sample grid). Decoding step j uses the
// image window of frames j - width + 1 .. j and is labelled with the velocity
// at the same instant. Each trial stores only the frames that some step's
// window can reach, so volumes are sliced on demand instead of materialised.

namespace mtd::ersp {

inline constexpr int kFeatureFormatVersion = 1;

struct LabelGrid {
  double step_s = 0.016;
  std::size_t steps = 125;
  /// Largest allowed distance between a frame's nominal time and the EEG sample it is computed at.
  double tolerance_s = 1e-3;
};

struct FeatureOptions {
  LabelGrid grid;
  /// Steps before target onset whose volumes are kept, so sequence models can look back.
  std::size_t history_steps = 5;
  std::size_t workers = 1;
};

struct TrialFeatures {
  int trial_index = 0;
  int target_id = 0;
  Condition condition = Condition::Executed;
  double t_target_s = 0.0;
  /// Frame index (relative to target onset) of stored column 0.
  long first_frame = 0;
  std::size_t frames = 0;
  std::vector<float> db;  // channels x freqs x frames
  std::vector<Vec3> labels;
};

struct SessionFeatures {
  std::string participant_id;
  int session_index = 0;
  Modality modality = Modality::Screen;
  std::vector<std::string> channels;
  std::vector<double> freqs_hz;
  double hop_s = 0.016;
  std::size_t width = 40;
  std::size_t steps = 0;
  std::size_t history_steps = 0;
  std::vector<TrialFeatures> trials;

  std::size_t volume_size() const { return channels.size() * freqs_hz.size() * width; }
  long first_step() const { return -static_cast<long>(history_steps); }

  /// Writes the volume for `step` (first_step() <= step < steps) in channel, freq, time order.
  void copy_volume(std::size_t trial, long step, float* out) const {
    const TrialFeatures& t = trials.at(trial);
    const long col = step - t.first_frame - static_cast<long>(width) + 1;
    require(col >= 0 && step - t.first_frame < static_cast<long>(t.frames), ErrorKind::InsufficientHistory,
            "step outside the stored frame range");
    const std::size_t nf = freqs_hz.size();
    for (std::size_t c = 0; c < channels.size(); ++c)
      for (std::size_t f = 0; f < nf; ++f) {
        const float* src = t.db.data() + (c * nf + f) * t.frames + col;
        std::memcpy(out + (c * nf + f) * width, src, width * sizeof(float));
      }
  }

  ErspVolume volume(std::size_t trial, long step) const {
    ErspVolume v;
    v.step_time_s = trials.at(trial).t_target_s + static_cast<double>(step) * hop_s;
    v.channels = channels.size();
    v.freqs = freqs_hz.size();
    v.width = width;
    v.images.resize(volume_size());
    copy_volume(trial, step, v.images.data());
    return v;
  }
};

/// Baseline-normalised ERSP of one trial from the start of its rest phase to
/// its last decoding step, plus the rest-phase frame range.
struct TrialErsp {
  TfArray db;
  long first_frame = 0;
  FrameRange rest;
};

inline TrialErsp trial_ersp(const SessionDataset& s, const std::vector<std::size_t>& rows, const MorletBank& bank,
                            const TrialEvent& ev, const ErspConfig& cfg, const LabelGrid& grid) {
  const double fs = s.eeg.sample_rate_hz();
  const double anchor = s.eeg.time_of(static_cast<std::size_t>(std::max<long long>(0, s.eeg.sample_at(ev.t_target_s))));
  const long first = static_cast<long>(std::ceil((ev.t_rest_s - anchor) / cfg.hop_s - 1e-9));
  const long last = static_cast<long>(grid.steps) - 1;
  const auto frames = static_cast<std::size_t>(last - first + 1);
  const double t0 = anchor + static_cast<double>(first) * cfg.hop_s;

  for (long k : {first, last}) {
    const double t = anchor + static_cast<double>(k) * cfg.hop_s;
    const auto si = s.eeg.sample_at(t);
    require(si >= 0 && si < static_cast<long long>(s.eeg.samples()), ErrorKind::OutOfBounds,
            "trial " + std::to_string(ev.trial_index) + " extends beyond the EEG stream");
    require(std::abs(s.eeg.time_of(static_cast<std::size_t>(si)) - t) <= grid.tolerance_s + 1e-12,
            ErrorKind::AlignmentError, "ERSP frame grid does not fall on EEG samples");
  }
  // the hop must land on samples for every frame, not just the ends
  const double hop_samples = cfg.hop_s * fs;
  require(std::abs(hop_samples - std::round(hop_samples)) < 1e-9 || 0.5 / fs <= grid.tolerance_s,
          ErrorKind::AlignmentError, "ERSP hop is not a whole number of EEG samples");

  TrialErsp out;
  out.first_frame = first;
  const TfArray p = tf_power_frames(s.eeg, rows, bank, t0, cfg.hop_s, frames);
  out.rest = frames_in(p, ev.t_rest_s, ev.t_indication_s);
  out.db = baseline_normalize(p, out.rest, cfg.baseline, cfg.epsilon);
  return out;
}

/// ERSP features and velocity labels for every trial of a session.
inline SessionFeatures extract_features(const SessionDataset& s, const ErspConfig& cfg, const FeatureOptions& opt = {}) {
  cfg.validate();
  require(std::abs(opt.grid.step_s - cfg.hop_s) < 1e-9, ErrorKind::AlignmentError,
          "label grid step differs from the ERSP hop");
  require(opt.grid.steps > 0, ErrorKind::ConfigError, "label grid needs at least one step");
  const std::vector<std::size_t> rows = s.montage.indices_of(Montage("features", cfg.channels));

  SessionFeatures out;
  out.participant_id = s.participant_id;
  out.session_index = s.session_index;
  out.modality = s.modality;
  out.channels = cfg.channels;
  out.freqs_hz = cfg.freqs_hz;
  out.hop_s = cfg.hop_s;
  out.width = cfg.image_width;
  out.steps = opt.grid.steps;
  out.history_steps = opt.history_steps;
  out.trials.resize(s.trials.size());
  if (s.trials.empty()) return out;

  const VelocityTrack vel = differentiate_velocity(s.kin);
  const MorletBank bank(cfg, s.eeg.sample_rate_hz());
  const long keep_from = -static_cast<long>(opt.history_steps) - static_cast<long>(cfg.image_width) + 1;

  parallel_for(s.trials.size(), opt.workers, [&](std::size_t i) {
    const TrialEvent& ev = s.trials[i];
    TrialErsp te = trial_ersp(s, rows, bank, ev, cfg, opt.grid);
    require(keep_from >= te.first_frame, ErrorKind::InsufficientHistory,
            "history steps reach back before the trial's rest phase");
    TrialFeatures& tf = out.trials[i];
    tf.trial_index = ev.trial_index;
    tf.target_id = ev.target_id;
    tf.condition = ev.condition;
    tf.t_target_s = ev.t_target_s;
    tf.first_frame = keep_from;
    tf.frames = static_cast<std::size_t>(static_cast<long>(opt.grid.steps) - keep_from);
    tf.db.resize(rows.size() * cfg.freqs_hz.size() * tf.frames);
    const auto skip = static_cast<std::size_t>(keep_from - te.first_frame);
    for (std::size_t c = 0; c < rows.size(); ++c)
      for (std::size_t f = 0; f < cfg.freqs_hz.size(); ++f) {
        const double* src = te.db.row(c, f) + skip;
        float* dst = tf.db.data() + (c * cfg.freqs_hz.size() + f) * tf.frames;
        for (std::size_t k = 0; k < tf.frames; ++k) dst[k] = static_cast<float>(src[k]);
      }
    const double t0 = te.db.t0_s - static_cast<double>(te.first_frame) * cfg.hop_s;
    require(t0 >= vel.timestamps_s.front() - opt.grid.tolerance_s &&
                t0 + static_cast<double>(opt.grid.steps - 1) * opt.grid.step_s <=
                    vel.timestamps_s.back() + opt.grid.tolerance_s,
            ErrorKind::AlignmentError, "label grid extends beyond the kinematic stream");
    tf.labels = resample_to_grid(vel, opt.grid.step_s, t0, opt.grid.steps).velocities_mps;
  });

  // Imagined trials borrow the mean executed velocity for their target.
  std::array<std::vector<Vec3>, 4> tmpl;
  std::array<int, 4> count{};
  for (auto& t : tmpl) t.assign(opt.grid.steps, Vec3{});
  for (const auto& t : out.trials) {
    if (t.condition != Condition::Executed) continue;
    const auto g = static_cast<std::size_t>(t.target_id);
    ++count[g];
    for (std::size_t k = 0; k < opt.grid.steps; ++k)
      for (std::size_t a = 0; a < 3; ++a) tmpl[g][k][a] += t.labels[k][a];
  }
  for (auto& t : out.trials) {
    if (t.condition != Condition::Imagined) continue;
    const auto g = static_cast<std::size_t>(t.target_id);
    require(count[g] > 0, ErrorKind::MissingData,
            "no executed trial for target " + std::to_string(t.target_id) + " to label imagined trials");
    for (std::size_t k = 0; k < opt.grid.steps; ++k)
      for (std::size_t a = 0; a < 3; ++a) t.labels[k][a] = tmpl[g][k][a] / count[g];
  }
  return out;
}

/// One (trial, step) decoding example; the label is trials[trial].labels[step].
struct TrainingPair {
  std::size_t trial = 0;
  std::size_t step = 0;
};

/// Pairs for the listed trials (all trials if empty), keeping every `stride`-th step.
inline std::vector<TrainingPair> training_pairs(const SessionFeatures& f, const std::vector<std::size_t>& trials = {},
                                                std::size_t stride = 1) {
  require(stride >= 1, ErrorKind::ConfigError, "pair stride must be >= 1");
  std::vector<TrainingPair> out;
  auto add = [&](std::size_t t) {
    for (std::size_t k = 0; k < f.steps; k += stride) out.push_back({t, k});
  };
  if (trials.empty())
    for (std::size_t t = 0; t < f.trials.size(); ++t) add(t);
  else
    for (std::size_t t : trials) add(t);
  return out;
}

struct TrainingSet {
  SessionFeatures features;
  std::vector<TrainingPair> pairs;
};

inline TrainingSet build_training_pairs(const SessionDataset& s, const ErspConfig& cfg, const FeatureOptions& opt = {}) {
  TrainingSet ts{extract_features(s, cfg, opt), {}};
  ts.pairs = training_pairs(ts.features);
  return ts;
}

// Cache file: one JSON header line, then per trial
//   u32 trial_index, u32 target, u32 condition, f64 t_target, u32 first_frame (two's complement),
//   u32 frames, float32 db[channels * freqs * frames], f64 labels[steps * 3].

inline void write_features(const std::filesystem::path& path, const SessionFeatures& f,
                           const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  nlohmann::ordered_json h;
  h["format_version"] = kFeatureFormatVersion;
  h["kind"] = "ersp-features";
  h["participant_id"] = f.participant_id;
  h["session_index"] = f.session_index;
  h["modality"] = std::string(to_string(f.modality));
  h["channels"] = f.channels;
  h["freqs_hz"] = f.freqs_hz;
  h["hop_s"] = f.hop_s;
  h["width"] = f.width;
  h["steps"] = f.steps;
  h["history_steps"] = f.history_steps;
  h["count"] = f.trials.size();
  for (const auto& [k, v] : extra.items()) h[k] = v;
  std::string out = h.dump() + "\n";
  for (const auto& t : f.trials) {
    fmt::put_u32(out, static_cast<std::uint32_t>(t.trial_index));
    fmt::put_u32(out, static_cast<std::uint32_t>(t.target_id));
    fmt::put_u32(out, t.condition == Condition::Executed ? 0u : 1u);
    fmt::put_f64(out, t.t_target_s);
    fmt::put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(t.first_frame)));
    fmt::put_u32(out, static_cast<std::uint32_t>(t.frames));
    for (float v : t.db) fmt::put_f32(out, v);
    for (const auto& l : t.labels)
      for (double v : l) fmt::put_f64(out, v);
  }
  fmt::write_file(path.string(), out);
}

inline nlohmann::json read_features_header(const std::filesystem::path& path) {
  const std::string buf = fmt::read_file(path.string());
  fmt::ByteReader rd(buf);
  try {
    return nlohmann::json::parse(rd.line());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, path.string() + ": bad feature header: " + e.what());
  }
}

inline SessionFeatures read_features(const std::filesystem::path& path) {
  const std::string buf = fmt::read_file(path.string());
  fmt::ByteReader rd(buf);
  SessionFeatures f;
  std::size_t count = 0;
  try {
    const auto h = nlohmann::json::parse(rd.line());
    require(h.at("kind") == "ersp-features" && h.at("format_version").get<int>() == kFeatureFormatVersion,
            ErrorKind::DataError, path.string() + " is not a supported feature file");
    f.participant_id = h.at("participant_id").get<std::string>();
    f.session_index = h.at("session_index").get<int>();
    f.modality = parse_modality(h.at("modality").get<std::string>());
    f.channels = h.at("channels").get<std::vector<std::string>>();
    f.freqs_hz = h.at("freqs_hz").get<std::vector<double>>();
    f.hop_s = h.at("hop_s").get<double>();
    f.width = h.at("width").get<std::size_t>();
    f.steps = h.at("steps").get<std::size_t>();
    f.history_steps = h.at("history_steps").get<std::size_t>();
    count = h.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, path.string() + ": bad feature header: " + e.what());
  }
  f.trials.resize(count);
  const std::size_t per_frame = f.channels.size() * f.freqs_hz.size();
  for (auto& t : f.trials) {
    t.trial_index = static_cast<int>(rd.u32());
    t.target_id = static_cast<int>(rd.u32());
    t.condition = rd.u32() == 0 ? Condition::Executed : Condition::Imagined;
    t.t_target_s = rd.f64();
    t.first_frame = static_cast<std::int32_t>(rd.u32());
    t.frames = rd.u32();
    t.db.resize(per_frame * t.frames);
    for (auto& v : t.db) v = rd.f32();
    t.labels.resize(f.steps);
    for (auto& l : t.labels)
      for (double& v : l) v = rd.f64();
  }
  require(rd.remaining() == 0, ErrorKind::DataError, path.string() + " has trailing bytes");
  return f;
}

}  // namespace mtd::ersp
