#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/kinematics.hpp"
#include "mtd/core/types.hpp"

namespace mtd {

enum class Phase { Rest = 0, Indication = 1, Target = 2, Reset = 3 };

/// Half-open sample range [begin, end).
struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// Length of the decoding-accuracy window, anchored at target onset.
inline constexpr double kScoringWindowS = 2.0;

/// One trial's per-phase sample ranges into the session's EEG stream and
/// velocity track. Holds indices only; the session must outlive the view.
struct TrialView {
  const TrialEvent* event = nullptr;
  std::array<SampleRange, 4> eeg_phase{};
  std::array<SampleRange, 4> vel_phase{};
  SampleRange eeg_scoring;
  SampleRange vel_scoring;
  double scoring_start_s = 0.0;
  double scoring_end_s = 0.0;

  const SampleRange& eeg(Phase p) const { return eeg_phase[static_cast<std::size_t>(p)]; }
  const SampleRange& vel(Phase p) const { return vel_phase[static_cast<std::size_t>(p)]; }
};

namespace detail {

// Index of the first sample at or after time t, sample k stamped start + k/rate.
inline std::size_t first_eeg_sample_at_or_after(const EegStream& eeg, double t) {
  const double x = (t - eeg.start_time_s()) * eeg.sample_rate_hz();
  const double r = std::round(x);
  // snap to exact sample boundaries despite float representation of event times
  const double k = std::abs(x - r) < 1e-6 ? r : std::ceil(x);
  return static_cast<std::size_t>(std::max(0.0, k));
}

inline std::size_t first_time_at_or_after(const std::vector<double>& ts, double t) {
  return static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), t - 1e-9) - ts.begin());
}

}  // namespace detail

/// Per-trial views of EEG and velocity samples. The velocity track must be
/// `differentiate_velocity(session.kin)`.
inline std::vector<TrialView> segment_trials(const SessionDataset& session, const VelocityTrack& vel) {
  std::vector<TrialView> out;
  out.reserve(session.trials.size());
  const auto& eeg = session.eeg;
  const double eeg_end = eeg.end_time_s();
  for (const auto& ev : session.trials) {
    require(ev.t_rest_s >= eeg.start_time_s() - 1e-9 && ev.t_end_s <= eeg_end + 1e-9, ErrorKind::OutOfBounds,
            "trial " + std::to_string(ev.trial_index) + " lies outside the EEG stream");
    require(!vel.empty() && ev.t_rest_s >= vel.timestamps_s.front() - 1e-9 &&
                ev.t_end_s <= vel.timestamps_s.back() + 1e-9,
            ErrorKind::OutOfBounds, "trial " + std::to_string(ev.trial_index) + " lies outside the kinematics");
    TrialView v;
    v.event = &ev;
    const std::array<double, 5> bounds{ev.t_rest_s, ev.t_indication_s, ev.t_target_s, ev.t_reset_s, ev.t_end_s};
    for (std::size_t p = 0; p < 4; ++p) {
      v.eeg_phase[p] = {detail::first_eeg_sample_at_or_after(eeg, bounds[p]),
                        detail::first_eeg_sample_at_or_after(eeg, bounds[p + 1])};
      v.vel_phase[p] = {detail::first_time_at_or_after(vel.timestamps_s, bounds[p]),
                        detail::first_time_at_or_after(vel.timestamps_s, bounds[p + 1])};
    }
    v.scoring_start_s = ev.t_target_s;
    v.scoring_end_s = ev.t_target_s + kScoringWindowS;
    v.eeg_scoring = {detail::first_eeg_sample_at_or_after(eeg, v.scoring_start_s),
                     detail::first_eeg_sample_at_or_after(eeg, v.scoring_end_s)};
    v.vel_scoring = {detail::first_time_at_or_after(vel.timestamps_s, v.scoring_start_s),
                     detail::first_time_at_or_after(vel.timestamps_s, v.scoring_end_s)};
    out.push_back(v);
  }
  return out;
}

inline std::vector<TrialView> segment_trials(const SessionDataset& session) {
  // The views only hold indices, so the temporary track is not referenced afterwards.
  return segment_trials(session, differentiate_velocity(session.kin));
}

}  // namespace mtd
