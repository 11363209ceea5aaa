#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// these oracles check.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mtd/core/types.hpp"

namespace oracle {

using mtd::Vec3;

/// Squared magnitude of a 10 Hz complex demodulation, box-averaged over `win` samples.
inline std::vector<double> demod_power(const double* x, std::size_t n, double fs, double f0, std::size_t win) {
  std::vector<std::complex<double>> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = -2.0 * std::numbers::pi * f0 * static_cast<double>(i) / fs;
    z[i] = x[i] * std::complex<double>(std::cos(ph), std::sin(ph));
  }
  std::vector<double> out(n, 0.0);
  std::complex<double> acc{0.0, 0.0};
  const std::size_t half = win / 2;
  std::vector<std::complex<double>> pre(n + 1);
  pre[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) pre[i + 1] = pre[i] + z[i];
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = i >= half ? i - half : 0;
    const std::size_t b = std::min(n, i + half + 1);
    acc = (pre[b] - pre[a]) / static_cast<double>(b - a);
    out[i] = std::norm(acc);
  }
  return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

/// In-sample linear readout: band envelopes of the online channels regressed
/// onto velocity at 16 ms steps over each trial's 2 s window; returns the
/// per-axis mean of per-trial correlations. Imagined trials are labelled with
/// the per-target mean executed velocity.
inline Vec3 linear_readout_r(const mtd::SessionDataset& s) {
  const auto rows = s.montage.indices_of(mtd::montages::online17());
  const double fs = s.eeg.sample_rate_hz();
  std::vector<std::vector<double>> env;
  for (auto r : rows) env.push_back(demod_power(s.eeg.channel(r), s.eeg.samples(), fs, 10.0, 50));

  const std::size_t steps = 125;
  auto vel_at = [&](double t) {
    // finite difference of the kinematics around t
    const auto& ts = s.kin.timestamps_s;
    const auto k = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.end(), t) - ts.begin());
    const std::size_t i = std::max<std::size_t>(1, std::min(k, ts.size() - 1));
    Vec3 v{};
    for (int a = 0; a < 3; ++a)
      v[a] = (s.kin.positions_m[i][a] - s.kin.positions_m[i - 1][a]) / (ts[i] - ts[i - 1]);
    return v;
  };
  std::array<std::vector<Vec3>, 4> tmpl;
  std::array<int, 4> cnt{};
  for (auto& t : tmpl) t.assign(steps, Vec3{});
  for (const auto& ev : s.trials) {
    if (ev.condition != mtd::Condition::Executed) continue;
    cnt[ev.target_id]++;
    for (std::size_t k = 0; k < steps; ++k) {
      auto v = vel_at(ev.t_target_s + 0.016 * k);
      for (int a = 0; a < 3; ++a) tmpl[ev.target_id][k][a] += v[a];
    }
  }
  for (int t = 0; t < 4; ++t)
    for (auto& v : tmpl[t])
      for (auto& x : v) x /= std::max(1, cnt[t]);

  const std::size_t n = s.trials.size() * steps;
  Eigen::MatrixXd X(n, rows.size() + 1);
  Eigen::MatrixXd Y(n, 3);
  std::size_t row = 0;
  for (const auto& ev : s.trials) {
    for (std::size_t k = 0; k < steps; ++k, ++row) {
      const double t = ev.t_target_s + 0.016 * k;
      const auto si = static_cast<std::size_t>(std::llround(t * fs));
      for (std::size_t c = 0; c < rows.size(); ++c) X(row, c) = std::log(env[c][si] + 1e-12);
      X(row, rows.size()) = 1.0;
      const Vec3 v = ev.condition == mtd::Condition::Executed ? vel_at(t) : tmpl[ev.target_id][k];
      for (int a = 0; a < 3; ++a) Y(row, a) = v[a];
    }
  }
  const Eigen::MatrixXd B = X.colPivHouseholderQr().solve(Y);
  const Eigen::MatrixXd P = X * B;
  Vec3 r{};
  for (int a = 0; a < 3; ++a) {
    double sum = 0;
    int used = 0;
    for (std::size_t tr = 0; tr < s.trials.size(); ++tr) {
      std::vector<double> p(steps), y(steps);
      for (std::size_t k = 0; k < steps; ++k) {
        p[k] = P(tr * steps + k, a);
        y[k] = Y(tr * steps + k, a);
      }
      const double rr = pearson(p, y);
      if (std::isfinite(rr)) {
        sum += rr;
        ++used;
      }
    }
    r[a] = sum / used;
  }
  return r;
}

}  // namespace oracle
