#include <gtest/gtest.h>

#include <cmath>

#include "mtd/core/kinematics.hpp"
#include "mtd/core/trials.hpp"
#include "mtd/synth/forward_model.hpp"
#include "support/oracles.hpp"

using namespace mtd;
using namespace mtd::synth;

namespace {

ProtocolConfig small_protocol(int trials = 32) {
  ProtocolConfig p;
  p.n_trials = trials;
  p.blocks_per_run = 1;
  p.montage = montages::online17();
  return p;
}

double sample_corr(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 3; ++k) {
      x.push_back(a[i][k]);
      y.push_back(b[i][k]);
    }
  return oracle::pearson(x, y);
}

}  // namespace

TEST(MinimumJerk, BoundaryConditions) {
  ReachPlan p{0, {0.0, 0.1, 0.2}, {0.3, -0.1, 0.5}, 2.0};
  auto k = minimum_jerk(p, 60.0);
  ASSERT_EQ(k.size(), 121u);
  EXPECT_EQ(k.positions_m.front(), p.start_m);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(k.positions_m.back()[a], p.end_m[a], 1e-15);
  const auto v0 = min_jerk_velocity(p, 0.0);
  for (double x : v0) EXPECT_EQ(x, 0.0);
  // zero acceleration at the ends: velocity is O(t^2)
  for (int a = 0; a < 3; ++a) EXPECT_LT(std::abs(min_jerk_velocity(p, 1e-4)[a]), 1e-6);
}

TEST(MinimumJerk, PeakSpeedMatchesBruteForce) {
  ReachPlan p{0, {0, 0, 0}, {0.15, 0.10, 0.30}, 2.0};
  auto k = minimum_jerk(p, 10000.0);
  auto v = differentiate_velocity(k);
  double peak = 0.0, t_peak = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& u = v.velocities_mps[i];
    const double sp = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    if (sp > peak) {
      peak = sp;
      t_peak = v.timestamps_s[i];
    }
  }
  const double dist = std::sqrt(0.15 * 0.15 + 0.10 * 0.10 + 0.30 * 0.30);
  EXPECT_NEAR(peak, 1.875 * dist / 2.0, 1e-6);
  EXPECT_NEAR(t_peak, 1.0, 2e-4);
}

TEST(MinimumJerk, ReversedPlanIsTimeMirrored) {
  ReachPlan p{0, {0, 0, 0}, {0.2, -0.1, 0.3}, 1.5};
  ReachPlan r{0, p.end_m, p.start_m, 1.5};
  for (int i = 0; i <= 30; ++i) {
    const double t = 1.5 * i / 30.0;
    const auto a = min_jerk_position(p, t);
    const auto b = min_jerk_position(r, 1.5 - t);
    for (int ax = 0; ax < 3; ++ax) EXPECT_NEAR(a[ax], b[ax], 1e-15);
  }
}

TEST(ApplyAssistance, Examples) {
  std::vector<Vec3> dec{{0.0, 2.0, 0.0}}, ideal{{2.0, 0.0, 0.0}};
  EXPECT_EQ(apply_assistance(dec, ideal, 1.0)[0], ideal[0]);
  EXPECT_EQ(apply_assistance(dec, ideal, 0.0)[0], dec[0]);
  const auto h = apply_assistance(dec, ideal, 0.5)[0];
  EXPECT_EQ(h, (Vec3{1.0, 1.0, 0.0}));
  try {
    apply_assistance(dec, {}, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeError);
  }
}

TEST(SynthSession, DefaultProtocolInvariants) {
  ForwardModelConfig cfg;
  cfg.snr = 0.0;  // structure only; skips carrier synthesis
  ProtocolConfig p;
  p.montage = montages::online17();
  auto s = synth_session(cfg, 3, Modality::VR, p);
  ASSERT_EQ(s.trials.size(), 256u);
  int executed = 0;
  for (const auto& t : s.trials) executed += t.condition == Condition::Executed;
  EXPECT_EQ(executed, 128);
  EXPECT_TRUE(blocks_balanced(s.trials));
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.assistance_fraction, 0.65);
  // every trial fits in both streams
  EXPECT_NO_THROW(segment_trials(s));
}

TEST(SynthSession, AssistanceFollowsSchedule) {
  ForwardModelConfig cfg;
  cfg.snr = 0.0;
  auto p = small_protocol(16);
  const double want[] = {1.0, 1.0, 0.65, 0.65, 0.60, 0.60, 0.50, 0.50, 0.40, 0.40};
  for (int si = 1; si <= 10; ++si) EXPECT_EQ(synth_session(cfg, si, Modality::Screen, p).assistance_fraction, want[si - 1]);
}

TEST(SynthSession, SameSeedIsBitIdentical) {
  ForwardModelConfig cfg;
  cfg.snr = 1.0;
  cfg.seed = 99;
  auto p = small_protocol(16);
  auto a = synth_session(cfg, 2, Modality::Screen, p);
  auto b = synth_session(cfg, 2, Modality::Screen, p);
  EXPECT_EQ(a.eeg.data(), b.eeg.data());
  EXPECT_EQ(a.kin.positions_m, b.kin.positions_m);
  cfg.seed = 100;
  auto c = synth_session(cfg, 2, Modality::Screen, p);
  EXPECT_NE(a.eeg.data(), c.eeg.data());
}

TEST(SynthSession, ImaginedTrialsKeepTheWristAtRest) {
  ForwardModelConfig cfg;
  cfg.snr = 0.0;
  auto p = small_protocol(32);
  auto s = synth_session(cfg, 1, Modality::Screen, p);
  auto vel = differentiate_velocity(s.kin);
  auto views = segment_trials(s, vel);
  for (const auto& v : views) {
    double peak = 0.0;
    for (std::size_t i = v.vel_scoring.begin; i < v.vel_scoring.end; ++i)
      peak = std::max(peak, std::abs(vel.velocities_mps[i][2]));
    if (v.event->condition == Condition::Imagined)
      EXPECT_EQ(peak, 0.0);
    else
      EXPECT_GT(peak, 0.1);
  }
}

TEST(SessionWeights, DriftZeroKeepsWeightsAndDriftOneDecorrelates) {
  ForwardModelConfig cfg;
  const auto m = montages::fc32();
  cfg.session_drift = 0.0;
  EXPECT_EQ(session_weights(cfg, m, "P01", 1), session_weights(cfg, m, "P01", 7));
  cfg.session_drift = 1.0;
  cfg.seed = 4;
  for (int s = 1; s < 10; ++s) {
    const double rho = sample_corr(session_weights(cfg, m, "P01", s), session_weights(cfg, m, "P01", s + 1));
    EXPECT_LT(std::abs(rho), 0.3) << "sessions " << s << "," << s + 1;
  }
  cfg.session_drift = 0.3;
  const double near = sample_corr(session_weights(cfg, m, "P01", 1), session_weights(cfg, m, "P01", 2));
  const double far = sample_corr(session_weights(cfg, m, "P01", 1), session_weights(cfg, m, "P01", 5));
  EXPECT_GT(near, far);

  // untuned channels stay silent under drift
  cfg.session_drift = 0.7;
  for (int s = 2; s <= 5; ++s) {
    const auto w = session_weights(cfg, m, "P01", s);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!cfg.tuned_channels.count(m.channels()[i])) {
        EXPECT_EQ(w[i], Vec3{}) << m.channels()[i];
      }
  }
}

TEST(ForwardModel, LinearReadoutRecoversTunedAxes) {
  ForwardModelConfig cfg;
  cfg.snr = 2.0;
  cfg.seed = 1;
  auto s = synth_session(cfg, 1, Modality::VR, small_protocol(32));
  const auto r = oracle::linear_readout_r(s);
  EXPECT_GE(r[1], 0.8);
  EXPECT_GE(r[2], 0.8);
}

TEST(ForwardModel, ReadoutIsMonotoneInSnr) {
  ForwardModelConfig cfg;
  cfg.seed = 2;
  double prev_y = -2.0, prev_z = -2.0;
  for (double snr : {0.0, 0.5, 1.0, 2.0}) {
    cfg.snr = snr;
    const auto r = oracle::linear_readout_r(synth_session(cfg, 1, Modality::VR, small_protocol(32)));
    EXPECT_GE(r[1], prev_y) << "snr " << snr;
    EXPECT_GE(r[2], prev_z) << "snr " << snr;
    prev_y = r[1];
    prev_z = r[2];
  }
}

TEST(ForwardModel, ZeroSnrCarriesNoVelocityInformation) {
  ForwardModelConfig cfg;
  cfg.snr = 0.0;
  cfg.seed = 3;
  const auto r = oracle::linear_readout_r(synth_session(cfg, 1, Modality::VR, small_protocol(32)));
  // In-sample fit with 18 regressors still overfits a little; no real signal survives.
  EXPECT_LT(std::abs(r[1]), 0.35);
  EXPECT_LT(std::abs(r[2]), 0.35);
}
