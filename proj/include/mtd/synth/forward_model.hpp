#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/core/types.hpp"
#include "mtd/dsp/noise.hpp"

// Synthetic sessions with a known EEG <-> velocity forward model.
//
// EEG(c, t) = background_c(t) + A_c(t) * carrier_c(t)
//   background_c : unit-RMS 1/f^gamma noise, scaled to background_uv
//   carrier_c    : unit-RMS constant-envelope rhythm wandering inside the carrier band
//   A_c(t)       : background_uv * sqrt(snr) * (1 + depth * clamp(w_c . v_hat(t), -1, 1))
//   v_hat        : velocity divided per axis by the nominal peak reach speed on that axis
// so a negative projection of velocity onto a channel's weights suppresses the
// band (desynchronisation) and a positive one enhances it.

namespace mtd::synth {

struct ReachPlan {
  int target_id = 0;
  Vec3 start_m{};
  Vec3 end_m{};
  double duration_s = 2.0;
};

/// Normalised minimum-jerk profile s(tau) = 10 tau^3 - 15 tau^4 + 6 tau^5 and its derivative.
inline double min_jerk_s(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  const double t3 = tau * tau * tau;
  return t3 * (10.0 - 15.0 * tau + 6.0 * tau * tau);
}

inline double min_jerk_ds(double tau) {
  if (tau <= 0.0 || tau >= 1.0) return 0.0;
  const double t2 = tau * tau;
  return 30.0 * t2 * (1.0 - 2.0 * tau + t2);
}

inline Vec3 min_jerk_position(const ReachPlan& p, double t) {
  const double s = min_jerk_s(t / p.duration_s);
  Vec3 out{};
  for (std::size_t a = 0; a < 3; ++a) out[a] = p.start_m[a] + (p.end_m[a] - p.start_m[a]) * s;
  return out;
}

inline Vec3 min_jerk_velocity(const ReachPlan& p, double t) {
  const double ds = min_jerk_ds(t / p.duration_s) / p.duration_s;
  Vec3 out{};
  for (std::size_t a = 0; a < 3; ++a) out[a] = (p.end_m[a] - p.start_m[a]) * ds;
  return out;
}

/// Samples a minimum-jerk reach at t = k / rate for k = 0..round(T * rate).
inline KinematicStream minimum_jerk(const ReachPlan& plan, double rate_hz) {
  require(rate_hz > 0.0, ErrorKind::ConfigError, "rate must be positive");
  require(plan.duration_s > 0.0, ErrorKind::ConfigError, "reach duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(plan.duration_s * rate_hz)) + 1;
  KinematicStream k;
  k.timestamps_s.reserve(n);
  k.positions_m.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    k.timestamps_s.push_back(t);
    k.positions_m.push_back(min_jerk_position(plan, t));
  }
  return k;
}

/// Blend shown as feedback: a * ideal + (1 - a) * decoded.
inline std::vector<Vec3> apply_assistance(const std::vector<Vec3>& decoded, const std::vector<Vec3>& ideal, double a) {
  require(decoded.size() == ideal.size(), ErrorKind::ShapeError, "decoded and ideal velocity differ in length");
  require(a >= 0.0 && a <= 1.0, ErrorKind::ConfigError, "assistance fraction outside [0,1]");
  std::vector<Vec3> out(decoded.size());
  for (std::size_t i = 0; i < decoded.size(); ++i)
    for (std::size_t ax = 0; ax < 3; ++ax) out[i][ax] = a * ideal[i][ax] + (1.0 - a) * decoded[i][ax];
  return out;
}

/// Phase-lagged copy of one channel's modulated carrier into another, gated to
/// the target phase. Used to plant ground-truth connectivity.
struct Coupling {
  std::string from;
  std::string to;
  double lag_s = 0.02;
  double gain = 1.0;
};

inline std::map<std::string, Vec3> default_tuning() {
  // Strong y/z tuning, weak x, mirroring the lateral axis being the hardest to decode.
  return {
      {"C3", {0.10, -0.50, -0.30}},  {"C4", {-0.10, 0.30, -0.50}},  {"CZ", {0.06, -0.20, -0.55}},
      {"FC1", {0.12, -0.45, 0.20}},  {"FC2", {-0.12, 0.45, -0.20}}, {"CP1", {0.06, 0.40, -0.40}},
      {"CP2", {-0.06, -0.40, -0.40}}, {"FC5", {0.10, -0.25, -0.25}}, {"CP6", {-0.10, 0.25, -0.25}},
  };
}

struct ForwardModelConfig {
  double snr = 1.0;
  std::map<std::string, Vec3> tuned_channels = default_tuning();
  FrequencyBand carrier_band = bands::alpha();
  double noise_exponent = 1.0;
  double session_drift = 0.0;
  std::uint64_t seed = 0;

  double background_uv = 10.0;
  double modulation_depth = 0.9;
  /// Per-axis speed that maps to unit modulation; defaults to the nominal
  /// peak reach speed on each axis.
  std::optional<Vec3> velocity_scale_mps;
  std::vector<Coupling> couplings;
  /// Optional channels x channels instantaneous mixing (row-major, montage order).
  std::optional<std::vector<double>> mixing;

  void validate() const {
    require(snr >= 0.0 && std::isfinite(snr), ErrorKind::ConfigError, "snr must be >= 0");
    require(session_drift >= 0.0 && session_drift <= 1.0, ErrorKind::ConfigError, "session_drift outside [0,1]");
    require(background_uv > 0.0, ErrorKind::ConfigError, "background_uv must be positive");
    if (velocity_scale_mps)
      for (double v : *velocity_scale_mps)
        require(v > 0.0, ErrorKind::ConfigError, "velocity_scale_mps must be positive");
    for (const auto& [ch, w] : tuned_channels)
      for (double v : w) require(std::isfinite(v), ErrorKind::ConfigError, "non-finite weight for " + ch);
  }
};

/// Target geometry relative to a shoulder-centred rest position. Toolkit
/// defaults; the four targets are offset in all three axes.
inline std::array<Vec3, 4> default_targets() {
  return {{{-0.15, 0.10, 0.30}, {0.15, 0.10, 0.25}, {-0.15, -0.10, 0.25}, {0.15, -0.10, 0.35}}};
}

struct ProtocolConfig {
  int n_trials = 256;
  int block_size = 16;
  int blocks_per_run = 2;
  double countdown_s = 30.0;
  double tail_s = 5.0;
  TrialTiming timing;
  double eeg_rate_hz = 250.0;
  double kin_rate_hz = 60.0;
  Montage montage = montages::fc32();
  std::array<Vec3, 4> targets = default_targets();
  Vec3 rest_position{0.0, 0.0, 0.0};
  double reach_duration_s = 2.0;
  double endpoint_jitter_m = 0.01;
  std::string participant_id = "P01";

  void validate() const {
    require(n_trials >= 0 && block_size > 0 && n_trials % block_size == 0, ErrorKind::ConfigError,
            "trial count must be a multiple of the block size");
    require(block_size % 4 == 0, ErrorKind::ConfigError, "block size must be a multiple of 4");
    require(blocks_per_run > 0, ErrorKind::ConfigError, "blocks_per_run must be positive");
    require(reach_duration_s > 0.0 && reach_duration_s <= timing.target_s, ErrorKind::ConfigError,
            "reach must fit in the target phase");
    require(eeg_rate_hz > 0.0 && kin_rate_hz > 0.0, ErrorKind::ConfigError, "rates must be positive");
  }
};

/// Modality of a session under the alternating protocol: odd-numbered
/// participants start with VR, even-numbered with screen.
inline Modality alternating_modality(int participant_number, int session_index) {
  const bool starts_vr = participant_number % 2 == 1;
  const bool first_kind = session_index % 2 == 1;
  return (starts_vr == first_kind) ? Modality::VR : Modality::Screen;
}

/// Channel x axis weights for a session. Session 1 uses the configured tuning;
/// each later session rotates the previous weights by angle drift * pi/2
/// toward a fresh random direction of equal norm, so drift 0 keeps them fixed
/// and drift 1 makes consecutive sessions uncorrelated. The direction is drawn
/// over the tuned channels only: drift reshuffles which axes they encode and
/// never moves tuning onto untuned channels.
inline std::vector<Vec3> session_weights(const ForwardModelConfig& cfg, const Montage& montage,
                                         const std::string& participant, int session_index) {
  const std::size_t nc = montage.size();
  std::vector<Vec3> w(nc, Vec3{});
  for (const auto& [label, wt] : cfg.tuned_channels) {
    auto i = montage.index_of(label);
    if (i) w[*i] = wt;
  }
  double norm0 = 0.0;
  for (const auto& r : w)
    for (double v : r) norm0 += v * v;
  norm0 = std::sqrt(norm0);
  if (cfg.session_drift <= 0.0 || norm0 == 0.0) return w;

  std::vector<bool> tuned(nc, false);
  for (std::size_t i = 0; i < nc; ++i) tuned[i] = w[i] != Vec3{};
  const double theta = cfg.session_drift * std::numbers::pi / 2.0;
  for (int s = 2; s <= session_index; ++s) {
    Rng rng(substream(substream(cfg.seed, "drift:" + participant), static_cast<std::uint64_t>(s)));
    std::vector<double> r(nc * 3), prev(nc * 3);
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t a = 0; a < 3; ++a) {
        prev[i * 3 + a] = w[i][a];
        r[i * 3 + a] = tuned[i] ? rng.normal() : 0.0;
      }
    double dot = 0.0, pp = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      dot += r[k] * prev[k];
      pp += prev[k] * prev[k];
    }
    double rr = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) {
      r[k] -= dot / pp * prev[k];
      rr += r[k] * r[k];
    }
    const double pn = std::sqrt(pp), rn = std::sqrt(rr);
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t a = 0; a < 3; ++a)
        w[i][a] = std::cos(theta) * prev[i * 3 + a] + std::sin(theta) * r[i * 3 + a] * pn / rn;
  }
  return w;
}

namespace detail {

struct Motion {
  ReachPlan out;
  ReachPlan back;
  double t_out = 0.0;
  double t_back = 0.0;
};

inline Vec3 motion_position(const Motion& m, double t, const Vec3& rest) {
  if (t < m.t_out) return rest;
  if (t < m.t_back) return min_jerk_position(m.out, t - m.t_out);
  return min_jerk_position(m.back, t - m.t_back);
}

inline Vec3 motion_velocity(const Motion& m, double t) {
  if (t >= m.t_out && t < m.t_out + m.out.duration_s) return min_jerk_velocity(m.out, t - m.t_out);
  if (t >= m.t_back && t < m.t_back + m.back.duration_s) return min_jerk_velocity(m.back, t - m.t_back);
  return {};
}

}  // namespace detail

/// Trial schedule for one session: blocks of `block_size` trials with a
/// countdown before each block, runs alternating executed / imagined, and a
/// shuffled target order per block with every target equally often.
inline std::vector<TrialEvent> schedule_trials(const ProtocolConfig& p, Rng& rng) {
  std::vector<TrialEvent> trials;
  double t = 0.0;
  const int blocks = p.n_trials / p.block_size;
  for (int b = 0; b < blocks; ++b) {
    t += p.countdown_s;
    const Condition cond = ((b / p.blocks_per_run) % 2 == 0) ? Condition::Executed : Condition::Imagined;
    std::vector<int> order;
    for (int k = 0; k < p.block_size; ++k) order.push_back(k % 4);
    rng.shuffle(order.begin(), order.end());
    for (int k = 0; k < p.block_size; ++k) {
      trials.push_back(TrialEvent::starting_at(static_cast<int>(trials.size()), order[static_cast<std::size_t>(k)],
                                               cond, t, p.timing));
      t += p.timing.total();
    }
  }
  return trials;
}

inline SessionDataset synth_session(const ForwardModelConfig& cfg, int session_index, Modality modality,
                                    const ProtocolConfig& protocol = {}) {
  cfg.validate();
  protocol.validate();
  const std::uint64_t sess_seed =
      substream(substream(cfg.seed, "session:" + protocol.participant_id), static_cast<std::uint64_t>(session_index));
  Rng sched_rng(substream(sess_seed, "schedule"));
  Rng kin_rng(substream(sess_seed, "kinematics"));

  SessionDataset s;
  s.participant_id = protocol.participant_id;
  s.session_index = session_index;
  s.modality = modality;
  s.assistance_fraction = default_assistance(session_index);
  s.montage = protocol.montage;
  s.trials = schedule_trials(protocol, sched_rng);

  const double total_s = (s.trials.empty() ? protocol.countdown_s : s.trials.back().t_end_s) + protocol.tail_s;

  // Executed trials move the wrist; imagined ones leave it at rest but drive
  // the EEG with the nominal plan.
  std::vector<detail::Motion> actual, intended;
  for (const auto& ev : s.trials) {
    const Vec3& target = protocol.targets[static_cast<std::size_t>(ev.target_id)];
    Vec3 end = target;
    if (ev.condition == Condition::Executed)
      for (double& v : end) v += protocol.endpoint_jitter_m * kin_rng.normal();
    detail::Motion nominal{{ev.target_id, protocol.rest_position, target, protocol.reach_duration_s},
                           {ev.target_id, target, protocol.rest_position, protocol.timing.reset_s},
                           ev.t_target_s,
                           ev.t_reset_s};
    detail::Motion real = nominal;
    real.out.end_m = end;
    real.back.start_m = end;
    intended.push_back(nominal);
    actual.push_back(real);
  }

  // Kinematics at the tracker rate.
  const auto n_kin = static_cast<std::size_t>(std::floor(total_s * protocol.kin_rate_hz)) + 1;
  s.kin.timestamps_s.resize(n_kin);
  s.kin.positions_m.resize(n_kin);
  {
    std::size_t ti = 0;
    for (std::size_t k = 0; k < n_kin; ++k) {
      const double t = static_cast<double>(k) / protocol.kin_rate_hz;
      while (ti < s.trials.size() && t >= s.trials[ti].t_end_s) ++ti;
      Vec3 p = protocol.rest_position;
      if (ti < s.trials.size() && s.trials[ti].condition == Condition::Executed && t >= s.trials[ti].t_rest_s)
        p = detail::motion_position(actual[ti], t, protocol.rest_position);
      s.kin.timestamps_s[k] = t;
      s.kin.positions_m[k] = p;
    }
  }

  // Velocity driving the modulation, at the EEG rate.
  const double fs = protocol.eeg_rate_hz;
  const auto n = static_cast<std::size_t>(std::floor(total_s * fs));
  std::vector<Vec3> drive(n, Vec3{});
  std::vector<char> in_target(n, 0);
  {
    std::size_t ti = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / fs;
      while (ti < s.trials.size() && t >= s.trials[ti].t_end_s) ++ti;
      if (ti >= s.trials.size() || t < s.trials[ti].t_rest_s) continue;
      const auto& m = s.trials[ti].condition == Condition::Executed ? actual[ti] : intended[ti];
      drive[i] = detail::motion_velocity(m, t);
      in_target[i] = (t >= s.trials[ti].t_target_s && t < s.trials[ti].t_reset_s) ? 1 : 0;
    }
  }

  Vec3 vscale{};
  if (cfg.velocity_scale_mps) {
    vscale = *cfg.velocity_scale_mps;
  } else {
    for (std::size_t a = 0; a < 3; ++a) {
      double d = 0.0;
      for (const auto& tg : protocol.targets) d = std::max(d, std::abs(tg[a] - protocol.rest_position[a]));
      vscale[a] = d > 0.0 ? 1.875 * d / protocol.reach_duration_s : 1.0;
    }
  }

  const std::size_t nc = s.montage.size();
  const auto weights = session_weights(cfg, s.montage, protocol.participant_id, session_index);
  std::vector<double> data(nc * n, 0.0);
  std::vector<std::vector<double>> modulated(nc);
  const double amp0 = cfg.background_uv * std::sqrt(cfg.snr);
  for (std::size_t c = 0; c < nc; ++c) {
    Rng noise_rng(substream(sess_seed, "noise:" + s.montage.channels()[c]));
    auto bg = dsp::colored_noise(n, fs, cfg.noise_exponent, noise_rng);
    double* row = data.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) row[i] = cfg.background_uv * bg[i];
    if (cfg.snr <= 0.0) continue;
    Rng carrier_rng(substream(sess_seed, "carrier:" + s.montage.channels()[c]));
    auto car = dsp::wandering_oscillator(n, fs, cfg.carrier_band.lo_hz, cfg.carrier_band.hi_hz, carrier_rng);
    const Vec3& w = weights[c];
    modulated[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double u = 0.0;
      for (std::size_t a = 0; a < 3; ++a) u += w[a] * drive[i][a] / vscale[a];
      u = std::clamp(u, -1.0, 1.0);
      modulated[c][i] = amp0 * (1.0 + cfg.modulation_depth * u) * car[i];
      row[i] += modulated[c][i];
    }
  }

  for (const auto& cp : cfg.couplings) {
    auto from = s.montage.index_of(cp.from);
    auto to = s.montage.index_of(cp.to);
    require(from && to, ErrorKind::ConfigError, "coupling references a channel outside the montage");
    require(!modulated[*from].empty(), ErrorKind::ConfigError, "coupling source needs snr > 0");
    const auto lag = static_cast<std::size_t>(std::llround(cp.lag_s * fs));
    double* row = data.data() + *to * n;
    for (std::size_t i = lag; i < n; ++i)
      if (in_target[i]) row[i] += cp.gain * modulated[*from][i - lag];
  }

  if (cfg.mixing) {
    require(cfg.mixing->size() == nc * nc, ErrorKind::ConfigError, "mixing matrix must be channels x channels");
    std::vector<double> mixed(nc * n, 0.0);
    for (std::size_t r = 0; r < nc; ++r)
      for (std::size_t c = 0; c < nc; ++c) {
        const double m = (*cfg.mixing)[r * nc + c];
        if (m == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) mixed[r * n + i] += m * data[c * n + i];
      }
    data.swap(mixed);
  }

  // Stored at float32 precision so the on-disk round trip is exact.
  for (double& v : data) v = static_cast<double>(static_cast<float>(v));
  s.eeg = EegStream(fs, nc, std::move(data), 0.0);
  return s;
}

}  // namespace mtd::synth
