#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtd/core/error.hpp"

namespace mtd {

using Vec3 = std::array<double, 3>;

inline constexpr std::array<std::string_view, 3> kAxisNames{"x", "y", "z"};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// ---------------------------------------------------------------------------
// Montage

class Montage {
 public:
  Montage() = default;
  Montage(std::string name, std::vector<std::string> channels,
          std::optional<std::vector<Point2>> positions = std::nullopt)
      : name_(std::move(name)), channels_(std::move(channels)), positions_(std::move(positions)) {
    std::set<std::string> seen;
    for (const auto& c : channels_) {
      require(seen.insert(c).second, ErrorKind::DataError, "duplicate channel label " + c);
    }
    if (positions_) {
      require(positions_->size() == channels_.size(), ErrorKind::ShapeError,
              "montage positions must match channel count");
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& channels() const { return channels_; }
  const std::optional<std::vector<Point2>>& positions() const { return positions_; }
  std::size_t size() const { return channels_.size(); }

  std::optional<std::size_t> index_of(std::string_view label) const {
    auto it = std::find(channels_.begin(), channels_.end(), label);
    if (it == channels_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - channels_.begin());
  }

  /// Row indices of `subset` inside this montage; throws MissingData if a label is absent.
  std::vector<std::size_t> indices_of(const Montage& subset) const {
    std::vector<std::size_t> out;
    out.reserve(subset.size());
    for (const auto& c : subset.channels()) {
      auto i = index_of(c);
      require(i.has_value(), ErrorKind::MissingData, "channel " + c + " not in montage " + name_);
      out.push_back(*i);
    }
    return out;
  }

  bool operator==(const Montage& o) const { return name_ == o.name_ && channels_ == o.channels_; }

 private:
  std::string name_;
  std::vector<std::string> channels_;
  std::optional<std::vector<Point2>> positions_;
};

namespace montages {

// Approximate azimuthal projection, Cz at the origin, T7/T8 at |x| = 0.8.
inline std::optional<Point2> scalp_position(std::string_view label) {
  static const std::vector<std::pair<std::string_view, Point2>> table{
      {"AF3", {-0.20, 0.62}}, {"AF4", {0.20, 0.62}},   {"F7", {-0.65, 0.47}},  {"F3", {-0.32, 0.40}},
      {"FZ", {0.00, 0.40}},   {"F4", {0.32, 0.40}},    {"F8", {0.65, 0.47}},   {"FC5", {-0.60, 0.20}},
      {"FC1", {-0.18, 0.20}}, {"FC2", {0.18, 0.20}},   {"FC6", {0.60, 0.20}},  {"T7", {-0.80, 0.00}},
      {"C3", {-0.40, 0.00}},  {"CZ", {0.00, 0.00}},    {"C4", {0.40, 0.00}},   {"T8", {0.80, 0.00}},
      {"CP5", {-0.60, -0.20}}, {"CP3", {-0.38, -0.20}}, {"CP1", {-0.18, -0.20}}, {"CP2", {0.18, -0.20}},
      {"CP4", {0.38, -0.20}}, {"CP6", {0.60, -0.20}},  {"P7", {-0.65, -0.47}}, {"P3", {-0.32, -0.40}},
      {"PZ", {0.00, -0.40}},  {"P4", {0.32, -0.40}},   {"P8", {0.65, -0.47}},  {"PO7", {-0.50, -0.65}},
      {"PO3", {-0.20, -0.62}}, {"PO4", {0.20, -0.62}}, {"PO8", {0.50, -0.65}}, {"OZ", {0.00, -0.80}},
  };
  for (const auto& [l, p] : table)
    if (l == label) return p;
  return std::nullopt;
}

inline Montage with_positions(std::string name, std::vector<std::string> labels) {
  std::vector<Point2> pos;
  for (const auto& l : labels) pos.push_back(scalp_position(l).value_or(Point2{}));
  return Montage(std::move(name), std::move(labels), std::move(pos));
}

/// Sensorimotor montage used for decoding and decoding-accuracy evaluation.
inline Montage online17() {
  return with_positions("online17", {"F3", "FZ", "F4", "FC5", "FC1", "FC2", "FC6", "C3", "CZ", "C4", "CP5",
                                     "CP1", "CP2", "CP6", "P3", "PZ", "P4"});
}

/// Full-coverage montage used for connectivity and topography.
inline Montage fc32() {
  return with_positions("fc32", {"C3",  "C4",  "AF3", "T7",  "F7",  "F3",  "FZ",  "F4",  "T8",  "FC5", "FC1",
                                 "FC2", "FC6", "AF4", "PO7", "PO8", "CZ",  "F8",  "CP5", "CP1", "CP2", "CP6",
                                 "P7",  "P3",  "PZ",  "P4",  "P8",  "CP3", "PO3", "PO4", "OZ",  "CP4"});
}

inline Montage by_name(std::string_view name) {
  if (name == "online17") return online17();
  if (name == "fc32") return fc32();
  fail(ErrorKind::ConfigError, "unknown built-in montage " + std::string(name));
}

}  // namespace montages

// ---------------------------------------------------------------------------
// Streams

/// Channel-major EEG block: all samples of channel 0, then channel 1, ...
class EegStream {
 public:
  EegStream() = default;
  EegStream(double sample_rate_hz, std::size_t channels, std::vector<double> data, double start_time_s = 0.0)
      : rate_(sample_rate_hz), channels_(channels), start_(start_time_s), data_(std::move(data)) {
    require(rate_ > 0.0, ErrorKind::DataError, "sample rate must be positive");
    require(channels_ > 0 && data_.size() % channels_ == 0, ErrorKind::ShapeError,
            "EEG data size is not a multiple of the channel count");
    samples_ = data_.size() / channels_;
    for (double v : data_) require(std::isfinite(v), ErrorKind::DataError, "non-finite EEG sample");
  }

  double sample_rate_hz() const { return rate_; }
  double start_time_s() const { return start_; }
  std::size_t channels() const { return channels_; }
  std::size_t samples() const { return samples_; }
  double duration_s() const { return static_cast<double>(samples_) / rate_; }
  double end_time_s() const { return start_ + duration_s(); }

  const double* channel(std::size_t c) const { return data_.data() + c * samples_; }
  double* channel(std::size_t c) { return data_.data() + c * samples_; }
  double at(std::size_t c, std::size_t s) const { return data_[c * samples_ + s]; }
  const std::vector<double>& data() const { return data_; }

  double time_of(std::size_t sample) const { return start_ + static_cast<double>(sample) / rate_; }

  /// Nearest sample index for a session time (may be out of range; callers check).
  long long sample_at(double t) const { return std::llround((t - start_) * rate_); }

  /// Copy of samples [s0, s1) for the given rows.
  EegStream slice(std::size_t s0, std::size_t s1, const std::vector<std::size_t>& rows) const {
    require(s0 <= s1 && s1 <= samples_, ErrorKind::OutOfBounds, "EEG slice out of range");
    const std::size_t n = s1 - s0;
    std::vector<double> out(rows.size() * n);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r] < channels_, ErrorKind::OutOfBounds, "EEG row out of range");
      std::copy_n(channel(rows[r]) + s0, n, out.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    EegStream s;
    s.rate_ = rate_;
    s.channels_ = rows.size();
    s.samples_ = n;
    s.start_ = time_of(s0);
    s.data_ = std::move(out);
    return s;
  }

  EegStream scaled(double k) const {
    EegStream s = *this;
    for (double& v : s.data_) v *= k;
    return s;
  }

 private:
  double rate_ = 250.0;
  std::size_t channels_ = 0;
  std::size_t samples_ = 0;
  double start_ = 0.0;
  std::vector<double> data_;
};

struct KinematicStream {
  std::vector<double> timestamps_s;
  std::vector<Vec3> positions_m;

  std::size_t size() const { return timestamps_s.size(); }

  /// Checks shape, finiteness, strict monotonicity and (optionally) the nominal rate.
  void validate(double nominal_rate_hz = 0.0, double jitter_frac = 0.1) const {
    require(timestamps_s.size() == positions_m.size(), ErrorKind::ShapeError,
            "kinematic timestamps and positions differ in length");
    for (std::size_t i = 0; i < size(); ++i) {
      require(std::isfinite(timestamps_s[i]), ErrorKind::DataError, "non-finite timestamp");
      for (double v : positions_m[i]) require(std::isfinite(v), ErrorKind::DataError, "non-finite position");
      if (i > 0) {
        const double dt = timestamps_s[i] - timestamps_s[i - 1];
        require(dt > 0.0, ErrorKind::InvalidTimestamps, "timestamps not strictly increasing");
        if (nominal_rate_hz > 0.0) {
          require(std::abs(dt * nominal_rate_hz - 1.0) <= jitter_frac, ErrorKind::InvalidTimestamps,
                  "kinematic sample interval outside tolerated jitter");
        }
      }
    }
  }
};

struct VelocityTrack {
  std::vector<double> timestamps_s;
  std::vector<Vec3> velocities_mps;

  std::size_t size() const { return timestamps_s.size(); }
  bool empty() const { return timestamps_s.empty(); }
};

// ---------------------------------------------------------------------------
// Trials and sessions

enum class Condition { Executed, Imagined };
enum class Modality { Screen, VR };

inline std::string_view to_string(Condition c) { return c == Condition::Executed ? "executed" : "imagined"; }
inline std::string_view to_string(Modality m) { return m == Modality::Screen ? "screen" : "vr"; }

inline Condition parse_condition(std::string_view s) {
  if (s == "executed") return Condition::Executed;
  if (s == "imagined") return Condition::Imagined;
  fail(ErrorKind::DataError, "unknown condition " + std::string(s));
}

inline Modality parse_modality(std::string_view s) {
  if (s == "screen") return Modality::Screen;
  if (s == "vr") return Modality::VR;
  fail(ErrorKind::ConfigError, "unknown modality " + std::string(s));
}

/// Phase durations of one trial (seconds).
struct TrialTiming {
  double rest_s = 2.5;
  double indication_s = 1.6;
  double target_s = 2.5;
  double reset_s = 1.0;
  double total() const { return rest_s + indication_s + target_s + reset_s; }
};

struct TrialEvent {
  int trial_index = 0;
  int target_id = 0;
  Condition condition = Condition::Executed;
  double t_rest_s = 0.0;
  double t_indication_s = 0.0;
  double t_target_s = 0.0;
  double t_reset_s = 0.0;
  double t_end_s = 0.0;

  static TrialEvent starting_at(int index, int target, Condition cond, double t0, const TrialTiming& tm = {}) {
    TrialEvent e;
    e.trial_index = index;
    e.target_id = target;
    e.condition = cond;
    e.t_rest_s = t0;
    e.t_indication_s = t0 + tm.rest_s;
    e.t_target_s = e.t_indication_s + tm.indication_s;
    e.t_reset_s = e.t_target_s + tm.target_s;
    e.t_end_s = e.t_reset_s + tm.reset_s;
    return e;
  }

  void validate(const TrialTiming& tm = {}, double tol_s = 1e-3) const {
    require(target_id >= 0 && target_id <= 3, ErrorKind::DataError, "target_id outside 0..3");
    auto check = [&](double a, double b, double want, const char* what) {
      require(b > a, ErrorKind::DataError, std::string("phase boundaries out of order at ") + what);
      require(std::abs((b - a) - want) <= tol_s, ErrorKind::DataError,
              std::string("phase duration mismatch: ") + what);
    };
    check(t_rest_s, t_indication_s, tm.rest_s, "rest");
    check(t_indication_s, t_target_s, tm.indication_s, "indication");
    check(t_target_s, t_reset_s, tm.target_s, "target");
    check(t_reset_s, t_end_s, tm.reset_s, "reset");
  }
};

struct FrequencyBand {
  std::string name;
  double lo_hz = 0.0;
  double hi_hz = 0.0;

  FrequencyBand() = default;
  FrequencyBand(std::string n, double lo, double hi) : name(std::move(n)), lo_hz(lo), hi_hz(hi) {
    require(lo >= 0.0 && lo < hi, ErrorKind::InvalidBand, "band must satisfy 0 <= lo < hi");
  }
};

namespace bands {
inline FrequencyBand delta() { return {"delta", 0.0, 4.0}; }
inline FrequencyBand theta() { return {"theta", 4.0, 8.0}; }
inline FrequencyBand alpha() { return {"alpha", 8.0, 12.0}; }
inline FrequencyBand low_beta() { return {"low-beta", 12.0, 18.0}; }
inline FrequencyBand high_beta() { return {"high-beta", 18.0, 28.0}; }
inline FrequencyBand gamma() { return {"gamma", 28.0, 40.0}; }

inline std::vector<FrequencyBand> canonical() {
  return {delta(), theta(), alpha(), low_beta(), high_beta(), gamma()};
}

inline FrequencyBand by_name(std::string_view name) {
  for (auto& b : canonical())
    if (b.name == name) return b;
  fail(ErrorKind::ConfigError, "unknown band " + std::string(name));
}
}  // namespace bands

/// Assistance fraction by 1-based session index for the default 10-session protocol.
inline double default_assistance(int session_index) {
  require(session_index >= 1 && session_index <= 10, ErrorKind::DataError, "session index outside 1..10");
  if (session_index <= 2) return 1.00;
  if (session_index <= 4) return 0.65;
  if (session_index <= 6) return 0.60;
  if (session_index <= 8) return 0.50;
  return 0.40;
}

struct SessionDataset {
  std::string participant_id;
  int session_index = 1;
  Modality modality = Modality::Screen;
  double assistance_fraction = 1.0;
  Montage montage;
  EegStream eeg;
  KinematicStream kin;
  std::vector<TrialEvent> trials;

  /// Structural checks shared by the loader and the generator.
  void validate(const TrialTiming& tm = {}, double tol_s = 1e-3) const {
    require(session_index >= 1 && session_index <= 10, ErrorKind::DataError, "session index outside 1..10");
    require(assistance_fraction >= 0.0 && assistance_fraction <= 1.0, ErrorKind::DataError,
            "assistance fraction outside [0,1]");
    require(eeg.channels() == montage.size(), ErrorKind::ShapeError, "EEG rows differ from montage size");
    kin.validate();
    for (const auto& t : trials) t.validate(tm, tol_s);
  }
};

/// True when every consecutive 16-trial block holds each target exactly 4 times.
inline bool blocks_balanced(const std::vector<TrialEvent>& trials, std::size_t block = 16) {
  if (trials.size() % block != 0) return false;
  for (std::size_t b = 0; b < trials.size(); b += block) {
    std::array<int, 4> counts{};
    for (std::size_t i = b; i < b + block; ++i) counts[static_cast<std::size_t>(trials[i].target_id)]++;
    for (int c : counts)
      if (c != static_cast<int>(block / 4)) return false;
  }
  return true;
}

}  // namespace mtd
