#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "mtd/core/rng.hpp"

namespace mtd::dsp {

/// Smallest n' >= n whose only prime factors are 2, 3 and 5.
inline std::size_t next_fast_len(std::size_t n) {
  if (n <= 1) return 1;
  for (std::size_t m = n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

/// White Gaussian noise shaped by |H(f)| in the frequency domain, rescaled to
/// unit RMS. `gain(f_hz)` must be even in f.
template <class Gain>
std::vector<double> shaped_noise(std::size_t n, double fs, Rng& rng, Gain&& gain) {
  const std::size_t m = next_fast_len(n);
  std::vector<std::complex<double>> x(m), spec;
  for (auto& v : x) v = {rng.normal(), 0.0};
  Eigen::FFT<double> fft;
  fft.fwd(spec, x);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t kk = k <= m / 2 ? k : m - k;
    spec[k] *= gain(static_cast<double>(kk) * fs / static_cast<double>(m));
  }
  fft.inv(x, spec);
  std::vector<double> out(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i].real();
    ss += out[i] * out[i];
  }
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0.0)
    for (double& v : out) v /= rms;
  return out;
}

/// 1/f^gamma background; the DC bin is removed.
inline std::vector<double> colored_noise(std::size_t n, double fs, double gamma, Rng& rng) {
  return shaped_noise(n, fs, rng, [gamma](double f) { return f <= 0.0 ? 0.0 : std::pow(f, -0.5 * gamma); });
}

/// Noise confined to [lo, hi] Hz (brick-wall in frequency).
inline std::vector<double> bandlimited_noise(std::size_t n, double fs, double lo, double hi, Rng& rng) {
  return shaped_noise(n, fs, rng, [lo, hi](double f) { return (f >= lo && f <= hi && f > 0.0) ? 1.0 : 0.0; });
}

/// Unit-RMS oscillation with constant envelope whose instantaneous frequency
/// follows an Ornstein-Uhlenbeck walk (time constant tau_s) reflected into [lo, hi].
inline std::vector<double> wandering_oscillator(std::size_t n, double fs, double lo, double hi, Rng& rng,
                                                double tau_s = 0.5) {
  const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
  const double a = std::exp(-1.0 / (tau_s * fs));
  const double kick = 0.5 * half * std::sqrt(1.0 - a * a);
  double f = mid + half * (2.0 * rng.uniform() - 1.0);
  double phase = 2.0 * std::numbers::pi * rng.uniform();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::numbers::sqrt2 * std::cos(phase);
    f = mid + a * (f - mid) + kick * rng.normal();
    if (f > hi) f = 2.0 * hi - f;
    if (f < lo) f = 2.0 * lo - f;
    f = std::clamp(f, lo, hi);
    phase += 2.0 * std::numbers::pi * f / fs;
  }
  return out;
}

}  // namespace mtd::dsp
