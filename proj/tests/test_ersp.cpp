#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include "mtd/ersp/features.hpp"
#include "mtd/synth/forward_model.hpp"

using namespace mtd;
using namespace mtd::ersp;

namespace {

EegStream tone(double f, double amp, double seconds, double fs = 250.0, double phase = 0.0) {
  const auto n = static_cast<std::size_t>(seconds * fs);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = amp * std::sin(2.0 * std::numbers::pi * f * i / fs + phase);
  return EegStream(fs, 1, std::move(d));
}

// Definitional Morlet power at one sample, written independently of MorletBank.
double morlet_oracle(const EegStream& eeg, std::size_t center, double f, double cycles = 7.0) {
  const double fs = eeg.sample_rate_hz();
  const double sigma = cycles / (2.0 * std::numbers::pi * f);
  const long h = static_cast<long>(std::ceil(3.5 * sigma * fs));
  std::complex<double> acc = 0.0;
  double gsum = 0.0;
  for (long k = -h; k <= h; ++k) {
    const double t = k / fs;
    const double g = std::exp(-t * t / (2.0 * sigma * sigma));
    gsum += g;
    const long i = static_cast<long>(center) + k;
    if (i < 0 || i >= static_cast<long>(eeg.samples())) continue;
    acc += eeg.at(0, static_cast<std::size_t>(i)) * g * std::polar(1.0, -2.0 * std::numbers::pi * f * t);
  }
  return std::norm(acc * (2.0 / gsum));
}

synth::ProtocolConfig small_protocol(int trials) {
  synth::ProtocolConfig p;
  p.n_trials = trials;
  p.blocks_per_run = 1;
  p.montage = montages::online17();
  return p;
}

SessionDataset synth_small(double snr, int trials, std::uint64_t seed = 1) {
  synth::ForwardModelConfig cfg;
  cfg.snr = snr;
  cfg.seed = seed;
  return synth::synth_session(cfg, 1, Modality::VR, small_protocol(trials));
}

}  // namespace

TEST(TfPower, MatchesDefinitionalMorlet) {
  const auto eeg = tone(10.0, 1.0, 8.0, 250.0, 0.3);
  ErspConfig cfg;
  const auto p = tf_power(eeg, cfg);
  for (std::size_t k : {0ul, 3ul, 100ul, 200ul, p.frames - 1})
    for (std::size_t f : {0ul, 6ul, 9ul, 19ul, 39ul}) {
      const auto center = static_cast<std::size_t>(eeg.sample_at(p.time_of(k)));
      const double want = morlet_oracle(eeg, center, cfg.freqs_hz[f]);
      EXPECT_NEAR(p.at(0, f, k), want, 1e-12 * std::max(1.0, want)) << "frame " << k << " freq " << f;
    }
}

TEST(TfPower, TenHertzToneSelectsTenHertzBin) {
  const auto p = tf_power(tone(10.0, 1.0, 10.0), ErspConfig{});
  const std::size_t mid = p.frames / 2;
  std::size_t best = 0;
  for (std::size_t f = 0; f < p.freqs; ++f)
    if (p.at(0, f, mid) > p.at(0, best, mid)) best = f;
  EXPECT_EQ(best, 9u);  // freqs start at 1 Hz
  EXPECT_GE(p.at(0, 9, mid), 10.0 * p.at(0, 19, mid));
  EXPECT_NEAR(p.at(0, 9, mid), 1.0, 1e-3);  // amplitude-normalised wavelet
  EXPECT_FALSE(p.edge[mid]);
  EXPECT_TRUE(p.edge[0]);
  EXPECT_TRUE(p.edge[p.frames - 1]);
}

TEST(TfPower, ZeroInputAndQuadraticScaling) {
  ErspConfig cfg;
  const auto z = tf_power(EegStream(250.0, 2, std::vector<double>(2 * 2500, 0.0)), cfg);
  for (double v : z.data) EXPECT_EQ(v, 0.0);

  Rng rng(7);
  std::vector<double> d(2 * 2500);
  for (auto& v : d) v = rng.normal();
  const EegStream eeg(250.0, 2, d);
  const auto a = tf_power(eeg, cfg);
  const auto b = tf_power(eeg.scaled(2.0), cfg);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(b.data[i], 4.0 * a.data[i], 1e-12 * (1.0 + a.data[i]));
}

TEST(TfPower, StreamShorterThanLongestWaveletIsRejected) {
  try {
    tf_power(tone(10.0, 1.0, 1.0), ErspConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
}

TEST(BaselineNormalize, WorkedExamples) {
  TfArray p(1, 1, 6, 0.0, 0.016);
  for (std::size_t k = 0; k < 3; ++k) p.at(0, 0, k) = 5.0;
  p.at(0, 0, 3) = 5.0;
  p.at(0, 0, 4) = 10.0;
  p.at(0, 0, 5) = 0.5;
  for (auto mode : {BaselineMode::LogMean, BaselineMode::Mean}) {
    const auto db = baseline_normalize(p, {0, 3}, mode);
    EXPECT_NEAR(db.at(0, 0, 0), 0.0, 1e-12);
    EXPECT_NEAR(db.at(0, 0, 3), 0.0, 1e-12);
    EXPECT_NEAR(db.at(0, 0, 4), 3.0103, 5e-5);
    EXPECT_NEAR(db.at(0, 0, 4), 10.0 * std::log10(2.0), 1e-12);
    EXPECT_NEAR(db.at(0, 0, 5), -10.0, 1e-12);
  }
  try {
    baseline_normalize(p, {2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidBaseline);
  }
}

TEST(BaselineNormalize, ModesDifferOnlyInTheReference) {
  TfArray p(1, 1, 4, 0.0, 1.0);
  p.data = {1.0, 4.0, 2.0, 8.0};
  const auto g = baseline_normalize(p, {0, 2}, BaselineMode::LogMean);
  const auto m = baseline_normalize(p, {0, 2}, BaselineMode::Mean);
  EXPECT_NEAR(g.at(0, 0, 3), 10.0 * std::log10(8.0 / 2.0), 1e-12);  // geometric mean of 1, 4
  EXPECT_NEAR(m.at(0, 0, 3), 10.0 * std::log10(8.0 / 2.5), 1e-12);
  // zero power is floored instead of producing -inf
  p.data = {0.0, 0.0, 0.0, 1.0};
  const auto z = baseline_normalize(p, {0, 2});
  EXPECT_EQ(z.at(0, 0, 2), 0.0);
  EXPECT_NEAR(z.at(0, 0, 3), 120.0, 1e-9);
}

TEST(WindowStack, ConstantFieldOverlapAndHistory) {
  ErspConfig cfg;
  TfArray e(2, 3, 50, 1.0, 0.016);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t k = 0; k < 50; ++k) e.at(c, f, k) = static_cast<double>(c * 10 + f);
  const auto v = window_stack(e, e.time_of(45), cfg);
  ASSERT_EQ(v.images.size(), 2u * 3u * 40u);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t t = 0; t < 40; ++t) EXPECT_EQ(v.at(c, f, t), v.at(c, f, 0));

  for (auto& x : e.data) x = 0.0;
  for (std::size_t k = 0; k < 50; ++k) e.at(1, 2, k) = static_cast<double>(k);
  const auto a = window_stack(e, e.time_of(44), cfg);
  const auto b = window_stack(e, e.time_of(45), cfg);
  EXPECT_EQ(a.at(1, 2, 39), 44.0f);  // newest frame last
  EXPECT_EQ(a.at(1, 2, 0), 5.0f);
  for (std::size_t t = 0; t < 39; ++t) EXPECT_EQ(a.at(1, 2, t + 1), b.at(1, 2, t));

  EXPECT_NO_THROW(window_stack(e, e.time_of(39), cfg));
  try {
    window_stack(e, e.time_of(38), cfg);  // only 39 frames available
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::InsufficientHistory);
  }
}

TEST(TrialErsp, RestPhaseAveragesToZeroDb) {
  const auto s = synth_small(1.0, 16);
  ErspConfig cfg;
  const auto rows = s.montage.indices_of(montages::online17());
  const MorletBank bank(cfg, s.eeg.sample_rate_hz());
  for (std::size_t t : {0ul, 7ul, 15ul}) {
    const auto te = trial_ersp(s, rows, bank, s.trials[t], cfg, LabelGrid{});
    ASSERT_EQ(te.rest.size(), 156u);  // floor(2.5 s / 16 ms)
    for (std::size_t c = 0; c < te.db.channels; ++c)
      for (std::size_t f = 0; f < te.db.freqs; ++f) {
        double m = 0.0;
        for (std::size_t k = te.rest.begin; k < te.rest.end; ++k) m += te.db.at(c, f, k);
        EXPECT_LT(std::abs(m / te.rest.size()), 1e-9);
      }
  }
}

TEST(TrialErsp, InvariantToAmplitudeScaling) {
  auto s = synth_small(1.0, 16);
  ErspConfig cfg;
  const auto rows = s.montage.indices_of(montages::online17());
  const MorletBank bank(cfg, s.eeg.sample_rate_hz());
  const auto a = trial_ersp(s, rows, bank, s.trials[3], cfg, LabelGrid{});
  for (double k : {1e-3, 0.37, 25.0}) {
    auto t = s;
    t.eeg = s.eeg.scaled(k);
    const auto b = trial_ersp(t, rows, bank, t.trials[3], cfg, LabelGrid{});
    double worst = 0.0;
    for (std::size_t i = 0; i < a.db.data.size(); ++i) worst = std::max(worst, std::abs(a.db.data[i] - b.db.data[i]));
    EXPECT_LT(worst, 1e-9) << "k=" << k;
  }
}

TEST(ExtractFeatures, ShapesPairsAndLabels) {
  const auto s = synth_small(1.0, 16);
  ErspConfig cfg;
  const auto ts = build_training_pairs(s, cfg);
  const auto& f = ts.features;
  ASSERT_EQ(f.trials.size(), 16u);
  EXPECT_EQ(ts.pairs.size(), 16u * 125u);
  EXPECT_EQ(f.volume_size(), 17u * 40u * 40u);
  const auto v = f.volume(2, 0);
  EXPECT_EQ(v.channels, 17u);
  EXPECT_EQ(v.freqs, 40u);
  EXPECT_EQ(v.width, 40u);
  for (float x : v.images) EXPECT_TRUE(std::isfinite(x));
  EXPECT_NO_THROW(f.volume(2, f.first_step()));
  EXPECT_THROW(f.volume(2, f.first_step() - 1), Error);
  EXPECT_THROW(f.volume(2, 125), Error);

  // volumes equal the window_stack of the trial's ERSP at the same step
  const auto rows = s.montage.indices_of(montages::online17());
  const MorletBank bank(cfg, s.eeg.sample_rate_hz());
  const auto te = trial_ersp(s, rows, bank, s.trials[2], cfg, LabelGrid{});
  for (long step : {-5L, 0L, 60L, 124L}) {
    const auto want = window_stack(te.db, te.db.time_of(static_cast<std::size_t>(step - te.first_frame)), cfg);
    EXPECT_EQ(f.volume(2, step).images, want.images) << "step " << step;
  }

  // executed labels are the resampled kinematic velocity; imagined ones the per-target executed mean
  const auto vel = differentiate_velocity(s.kin);
  for (const auto& t : f.trials) {
    ASSERT_EQ(t.labels.size(), 125u);
    if (t.condition == Condition::Executed) {
      const auto want = sample_at(vel, t.t_target_s + 0.016 * 50);
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(t.labels[50][a], want[a], 1e-12);
    } else {
      Vec3 m{};
      int n = 0;
      for (const auto& u : f.trials)
        if (u.condition == Condition::Executed && u.target_id == t.target_id) {
          for (int a = 0; a < 3; ++a) m[a] += u.labels[50][a];
          ++n;
        }
      ASSERT_GT(n, 0);
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(t.labels[50][a], m[a] / n, 1e-12);
    }
  }
  const auto strided = training_pairs(f, {0, 1}, 8);
  EXPECT_EQ(strided.size(), 2u * 16u);
}

TEST(ExtractFeatures, EmptySessionAndAlignment) {
  auto s = synth_small(0.0, 16);
  ErspConfig cfg;
  auto empty = s;
  empty.trials.clear();
  EXPECT_TRUE(build_training_pairs(empty, cfg).pairs.empty());

  FeatureOptions opt;
  opt.grid.step_s = 0.020;
  try {
    extract_features(s, cfg, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AlignmentError);
  }
  // labels beyond the recorded kinematics
  auto cut = s;
  const double stop = s.trials[3].t_target_s + 1.0;
  while (cut.kin.timestamps_s.back() > stop) {
    cut.kin.timestamps_s.pop_back();
    cut.kin.positions_m.pop_back();
  }
  try {
    extract_features(cut, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AlignmentError);
  }
}

TEST(ExtractFeatures, CarrierBandFollowsInjectedModulationSign) {
  // Expected sign of C3's modulation per target, from its tuning and the
  // per-axis normalised reach direction.
  const auto s = synth_small(2.0, 32, 5);
  const auto f = extract_features(s, ErspConfig{});
  const auto w = synth::default_tuning();
  const std::size_t c3 = 7;  // online17 order
  ASSERT_EQ(f.channels[c3], "C3");
  const auto targets = synth::default_targets();
  int agree = 0, total = 0;
  for (const auto& t : f.trials) {
    // mean over the middle of the reach, alpha rows 8..12 Hz (indices 7..11)
    double db = 0.0;
    int n = 0;
    for (long step = 40; step <= 90; ++step) {
      const auto v = f.volume(static_cast<std::size_t>(&t - f.trials.data()), step);
      for (std::size_t fr = 7; fr <= 11; ++fr) {
        db += v.at(c3, fr, 39);
        ++n;
      }
    }
    db /= n;
    const auto& tg = targets[static_cast<std::size_t>(t.target_id)];
    double u = 0.0;
    for (std::size_t a = 0; a < 3; ++a) {
      double scale = 0.0;
      for (const auto& o : targets) scale = std::max(scale, std::abs(o[a]));
      u += w.at("C3")[a] * tg[a] / scale;
    }
    if (std::abs(u) < 0.15) continue;
    ++total;
    agree += (db > 0) == (u > 0);
  }
  ASSERT_GT(total, 8);
  EXPECT_GE(agree, total - 1) << agree << "/" << total;
}

TEST(FeatureCache, RoundTripIsExact) {
  const auto s = synth_small(1.0, 16);
  const auto f = extract_features(s, ErspConfig{});
  const auto path = std::filesystem::temp_directory_path() / "mtd_test_features.bin";
  write_features(path, f, {{"config_hash", "abc"}});
  const auto g = read_features(path);
  EXPECT_EQ(read_features_header(path).at("config_hash"), "abc");
  ASSERT_EQ(g.trials.size(), f.trials.size());
  EXPECT_EQ(g.channels, f.channels);
  EXPECT_EQ(g.steps, f.steps);
  for (std::size_t i = 0; i < f.trials.size(); ++i) {
    EXPECT_EQ(g.trials[i].db, f.trials[i].db);
    EXPECT_EQ(g.trials[i].labels, f.trials[i].labels);
    EXPECT_EQ(g.trials[i].first_frame, f.trials[i].first_frame);
    EXPECT_EQ(g.trials[i].condition, f.trials[i].condition);
  }
  std::filesystem::remove(path);
}
