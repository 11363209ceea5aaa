#include <gtest/gtest.h>

#include <numbers>

#include "mtd/fc/connectivity.hpp"
#include "mtd/synth/forward_model.hpp"

using namespace mtd;
using namespace mtd::fc;

namespace {

constexpr double kFs = 250.0;
constexpr std::size_t kN = 375;  // 1.5 s
const double kTwoPi = 2.0 * std::numbers::pi;

Epochs noise_epochs(std::size_t trials, std::size_t channels, std::uint64_t seed) {
  Epochs e(trials, channels, kN, kFs);
  Rng r(seed);
  for (double& v : e.data) v = r.normal();
  return e;
}

Epochs one_channel(const Epochs& e, std::size_t c) {
  Epochs o(e.trials, 1, e.samples, e.sample_rate_hz);
  for (std::size_t t = 0; t < e.trials; ++t) std::copy_n(e.row(t, c), e.samples, o.row(t, 0));
  return o;
}

// Channel `to` receives a copy of channel `from` delayed by `lag` samples plus noise.
void plant_lag(Epochs& e, std::size_t from, std::size_t to, std::size_t lag, double gain, Rng& r) {
  for (std::size_t t = 0; t < e.trials; ++t)
    for (std::size_t i = 0; i < e.samples; ++i) {
      const double src = i >= lag ? e.row(t, from)[i - lag] : r.normal();
      e.row(t, to)[i] = gain * src + 0.3 * r.normal();
    }
}

// Narrowband source: alpha-filtered noise, so a small lag is a clear phase shift.
Epochs alpha_noise(std::size_t trials, std::size_t channels, std::uint64_t seed) {
  return bandpass(noise_epochs(trials, channels, seed), bands::alpha());
}

}  // namespace

TEST(Filter, MatchesReferenceMagnitudeResponse) {
  const double f[] = {1, 4, 8, 10, 12, 20, 30, 35, 60};
  const double band_alpha[] = {3.20644066e-06, 1.62611181e-03, 7.07106781e-01, 9.99999996e-01, 7.07106781e-01,
                               4.51405432e-03, 4.18067305e-04, 1.84970685e-04, 9.38964715e-06};
  const double low4[] = {9.99992419e-01, 7.07106781e-01, 6.17516025e-02, 2.51413509e-02, 1.20146102e-02,
                         1.47386611e-03, 2.60662424e-04, 1.30637394e-04, 8.23692940e-06};
  const double band_gamma[] = {1.67682905e-08, 4.51504682e-06, 8.53342394e-05, 2.37306377e-04, 5.80816832e-04,
                               1.41646533e-02, 9.88783381e-01, 9.99996344e-01, 4.04492594e-03};
  const auto a = band_filter(bands::alpha(), kFs), d = band_filter(bands::delta(), kFs),
             g = band_filter(bands::gamma(), kFs);
  EXPECT_EQ(a.size(), 4u);
  EXPECT_EQ(d.size(), 2u);
  for (int i = 0; i < 9; ++i) {
    EXPECT_NEAR(gain_at(a, f[i], kFs), band_alpha[i], 1e-8 + 1e-6 * band_alpha[i]);
    EXPECT_NEAR(gain_at(d, f[i], kFs), low4[i], 1e-8 + 1e-6 * low4[i]);
    EXPECT_NEAR(gain_at(g, f[i], kFs), band_gamma[i], 1e-8 + 1e-6 * band_gamma[i]);
  }
}

TEST(Filter, FiltfiltMatchesReference) {
  std::vector<double> x(kN);
  for (std::size_t i = 0; i < kN; ++i) x[i] = std::sin(kTwoPi * 10 * i / kFs) + 0.3 * std::cos(kTwoPi * 3 * i / kFs);
  const auto y = filtfilt(band_filter(bands::alpha(), kFs), x.data(), kN);
  EXPECT_NEAR(y[0], 0.0418094, 1e-6);
  EXPECT_NEAR(y[1], 0.27106354, 1e-6);
  EXPECT_NEAR(y[50], -0.01831912, 1e-6);
  EXPECT_NEAR(y[187], 0.13942131, 1e-6);
  EXPECT_NEAR(y[374], -0.00200259, 1e-6);
}

TEST(Filter, PassbandStopbandAndZeroPhase) {
  Epochs e(1, 1, 2000, kFs);
  for (std::size_t i = 0; i < e.samples; ++i) e.row(0, 0)[i] = std::sin(kTwoPi * 10 * i / kFs);
  auto amp = [](const Epochs& f) {
    double m = 0;
    for (std::size_t i = 500; i < 1500; ++i) m = std::max(m, std::abs(f.row(0, 0)[i]));
    return m;
  };
  const auto a = bandpass(e, bands::alpha());
  EXPECT_GE(amp(a), 0.9);
  EXPECT_LE(amp(bandpass(e, bands::gamma())), 0.05);
  // Cross-correlation of input and filtered tone peaks at lag 0.
  double best = -1e300;
  int best_lag = 99;
  for (int lag = -12; lag <= 12; ++lag) {
    double s = 0;
    for (std::size_t i = 500; i < 1500; ++i) s += e.row(0, 0)[i] * a.row(0, 0)[static_cast<std::size_t>(int(i) + lag)];
    if (s > best) best = s, best_lag = lag;
  }
  EXPECT_EQ(best_lag, 0);
}

TEST(Filter, RejectsBandsAboveNyquist) {
  try {
    band_filter(bands::gamma(), 60.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidBand);
  }
  EXPECT_THROW(bandpass(Epochs(1, 1, 100, 70.0), bands::gamma()), Error);
}

TEST(Eic, DuplicateChannelIsNearZero) {
  auto e = noise_epochs(20, 2, 3);
  for (std::size_t t = 0; t < e.trials; ++t) std::copy_n(e.row(t, 0), kN, e.row(t, 1));
  EXPECT_LT(eic_matrix(e, bands::alpha())(0, 1), 0.02);
  const auto x = one_channel(e, 0);
  EXPECT_LT(eic_pair(x, x, bands::theta()), 0.02);
}

TEST(Eic, QuadraturePairIsNearOne) {
  Epochs x(10, 1, kN, kFs), y(10, 1, kN, kFs);
  Rng r(5);
  for (std::size_t t = 0; t < 10; ++t) {
    const double ph = r.uniform(0, kTwoPi);
    for (std::size_t i = 0; i < kN; ++i) {
      x.row(t, 0)[i] = std::sin(kTwoPi * 10 * i / kFs + ph);
      y.row(t, 0)[i] = std::cos(kTwoPi * 10 * i / kFs + ph);
    }
  }
  EXPECT_GE(eic_pair(x, y, bands::alpha()), 0.9);
}

TEST(Eic, IndependentNoiseNullLevel) {
  double mean = 0;
  int n = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto m = eic_matrix(noise_epochs(40, 6, 100 + s), bands::alpha());
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = a + 1; b < 6; ++b) mean += m(a, b), ++n;
  }
  EXPECT_LE(mean / n, 0.15);
}

TEST(Eic, MatrixIsSymmetricBoundedAndEquivariant) {
  auto e = alpha_noise(15, 4, 8);
  Rng r(1);
  plant_lag(e, 0, 2, 6, 1.0, r);
  const auto m = eic_matrix(e, bands::alpha());
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_EQ(m(a, a), 0.0);
    for (std::size_t b = 0; b < 4; ++b) {
      EXPECT_EQ(m(a, b), m(b, a));
      EXPECT_GE(m(a, b), 0.0);
      EXPECT_LE(m(a, b), 1.0);
    }
  }
  const std::size_t perm[] = {3, 1, 0, 2};
  Epochs p(e.trials, 4, kN, kFs);
  for (std::size_t t = 0; t < e.trials; ++t)
    for (std::size_t c = 0; c < 4; ++c) std::copy_n(e.row(t, perm[c]), kN, p.row(t, c));
  const auto mp = eic_matrix(p, bands::alpha());
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) EXPECT_NEAR(mp(a, b), m(perm[a], perm[b]), 1e-12);
}

TEST(Eic, LaggedCouplingIsTheArgmax) {
  auto e = alpha_noise(20, 3, 9);
  Rng r(2);
  plant_lag(e, 0, 2, 6, 1.0, r);  // 24 ms at 10 Hz: ~86 degrees
  const auto m = eic_matrix(e, bands::alpha());
  EXPECT_GT(m(0, 2), m(0, 1));
  EXPECT_GT(m(0, 2), m(1, 2));
}

TEST(Eic, ScalingInvariant) {
  auto e = alpha_noise(12, 3, 10);
  Rng r(3);
  plant_lag(e, 0, 1, 5, 1.0, r);
  const auto m = eic_matrix(e, bands::alpha());
  for (std::size_t t = 0; t < e.trials; ++t)
    for (std::size_t i = 0; i < kN; ++i) e.row(t, 1)[i] *= 37.5, e.row(t, 2)[i] *= 1e-3;
  const auto ms = eic_matrix(e, bands::alpha());
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(ms.v[i], m.v[i], 1e-6);
}

TEST(Eic, InstantaneousMixingStaysAtNullLevel) {
  double mixed = 0, null = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto src = noise_epochs(40, 2, 200 + s);
    Epochs m(40, 2, kN, kFs);
    for (std::size_t t = 0; t < 40; ++t)
      for (std::size_t i = 0; i < kN; ++i) {
        m.row(t, 0)[i] = src.row(t, 0)[i] + 0.8 * src.row(t, 1)[i];
        m.row(t, 1)[i] = 0.7 * src.row(t, 0)[i] + src.row(t, 1)[i];
      }
    mixed += eic_matrix(m, bands::alpha())(0, 1);
    null += eic_matrix(src, bands::alpha())(0, 1);
  }
  EXPECT_LE(mixed / 10, null / 10 + 0.05);
}

TEST(Eic, TooFewWindowsAndEmptyBand) {
  Epochs e(2, 2, 150, kFs);  // 0.6 s: one 0.5 s window
  try {
    eic_matrix(e, bands::alpha());
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::InsufficientData);
  }
  EXPECT_THROW(eic_matrix(noise_epochs(2, 2, 1), FrequencyBand("narrow", 10.2, 10.4)), Error);
}

TEST(Permutation, DeterministicAcrossWorkers) {
  EpochPair ep{alpha_noise(16, 5, 20), alpha_noise(16, 5, 21)};
  PermutationOptions o;
  o.n_perm = 200;
  o.seed = 4;
  const auto a = permutation_test(ep, bands::alpha(), o);
  o.workers = 6;
  const auto b = permutation_test(ep, bands::alpha(), o);
  EXPECT_EQ(a.null_max, b.null_max);
  EXPECT_EQ(a.significant, b.significant);
  o.seed = 5;
  EXPECT_NE(permutation_test(ep, bands::alpha(), o).null_max, a.null_max);
}

TEST(Permutation, DetectsInjectedCouplingAndDisplayIsSubset) {
  auto task = alpha_noise(30, 5, 30);
  Rng r(7);
  plant_lag(task, 1, 3, 6, 1.0, r);
  EpochPair ep{task, alpha_noise(30, 5, 31)};
  PermutationOptions o;
  o.n_perm = 300;
  o.display_threshold = 0.2;
  const auto res = permutation_test(ep, bands::alpha(), o);
  EXPECT_TRUE(res.is_significant(1, 3));
  EXPECT_TRUE(res.is_significant(3, 1));
  for (std::size_t i = 0; i < res.displayed.size(); ++i) {
    if (res.displayed[i]) {
      EXPECT_TRUE(res.significant[i]);
    }
  }
  EXPECT_FALSE(res.few_permutations);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b)
      EXPECT_DOUBLE_EQ(res.eic_diff(a, b), res.eic_task(a, b) - res.eic_base(a, b));
}

TEST(Permutation, FlagsSmallPermutationCountsAndShapeErrors) {
  EpochPair ep{alpha_noise(8, 3, 1), alpha_noise(8, 3, 2)};
  PermutationOptions o;
  o.n_perm = 50;
  EXPECT_TRUE(permutation_test(ep, bands::alpha(), o).few_permutations);
  EpochPair bad{alpha_noise(8, 3, 1), alpha_noise(7, 3, 2)};
  EXPECT_THROW(permutation_test(bad, bands::alpha(), o), Error);
}

TEST(Topo, IdentityDoublingAndErd) {
  const auto base = noise_epochs(10, 4, 40);
  auto r = band_power_topo({{base, base}}, bands::alpha());
  for (double d : r.db) EXPECT_EQ(d, 0.0);
  auto task = base;
  for (std::size_t t = 0; t < task.trials; ++t)
    for (std::size_t i = 0; i < kN; ++i) task.row(t, 2)[i] *= 2.0;
  r = band_power_topo({{task, base}}, bands::alpha());
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(r.db[c], c == 2 ? 10 * std::log10(4.0) : 0.0, 1e-9);
}

TEST(Topo, SynthErdOnC3IsMostNegative) {
  synth::ForwardModelConfig cfg;
  cfg.snr = 4.0;
  cfg.tuned_channels = {{"C3", {0.0, 0.0, -1.0}}};
  cfg.seed = 12;
  synth::ProtocolConfig proto;
  proto.montage = montages::fc32();
  proto.n_trials = 32;
  const auto s = synth::synth_session(cfg, 1, Modality::Screen, proto);
  const auto ep = epochs_from_session(s, montages::fc32());
  EXPECT_EQ(ep.task.samples, 375u);
  EXPECT_EQ(ep.task.channels, 32u);
  const auto r = band_power_topo({ep}, bands::alpha());
  const auto c3 = *montages::fc32().index_of("C3");
  const auto argmin = static_cast<std::size_t>(std::min_element(r.db.begin(), r.db.end()) - r.db.begin());
  EXPECT_EQ(argmin, c3);
  EXPECT_LT(r.db[c3], -1.0);
}

TEST(Csv, EdgeAndTopoLayout) {
  Montage m("m3", {"A", "B", "C"});
  EpochPair ep{alpha_noise(8, 3, 1), alpha_noise(8, 3, 2)};
  PermutationOptions o;
  o.n_perm = 100;
  const auto res = permutation_test(ep, bands::alpha(), o);
  const auto csv = edge_csv({res}, m);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "band,ch_a,ch_b,eic_task,eic_base,diff,significant,displayed");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_NE(csv.find("\nalpha,A,B,"), std::string::npos);
  const auto topo = topo_csv({band_power_topo({ep}, bands::alpha())}, m);
  EXPECT_EQ(topo.substr(0, topo.find('\n')), "band,channel,db");
  EXPECT_EQ(std::count(topo.begin(), topo.end(), '\n'), 4);
}
