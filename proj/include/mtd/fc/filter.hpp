#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/types.hpp"

namespace mtd::fc {

/// Epoched multichannel data, laid out trial-major then channel-major.
struct Epochs {
  std::size_t trials = 0, channels = 0, samples = 0;
  double sample_rate_hz = 250.0;
  std::vector<double> data;

  Epochs() = default;
  Epochs(std::size_t t, std::size_t c, std::size_t s, double fs)
      : trials(t), channels(c), samples(s), sample_rate_hz(fs), data(t * c * s, 0.0) {}

  double* row(std::size_t t, std::size_t c) { return data.data() + (t * channels + c) * samples; }
  const double* row(std::size_t t, std::size_t c) const { return data.data() + (t * channels + c) * samples; }
  double duration_s() const { return static_cast<double>(samples) / sample_rate_hz; }

  void validate() const {
    require(data.size() == trials * channels * samples, ErrorKind::ShapeError, "epoch buffer size mismatch");
    require(sample_rate_hz > 0.0, ErrorKind::DataError, "sample rate must be positive");
  }
};

/// Second-order section in direct form: b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

namespace detail {

using cplx = std::complex<double>;

inline std::vector<cplx> butter_prototype(int order) {
  std::vector<cplx> p;
  for (int k = 0; k < order; ++k)
    p.push_back(std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order)));
  return p;
}

inline cplx bilinear(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

inline double prewarp(double f, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); }

inline cplx response(const std::vector<Biquad>& sos, double f, double fs) {
  const cplx z1 = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
  cplx h = 1.0;
  for (const auto& s : sos)
    h *= (s.b0 + s.b1 * z1 + s.b2 * z1 * z1) / (1.0 + s.a1 * z1 + s.a2 * z1 * z1);
  return h;
}

// Pairs digital poles with their conjugates into sections sharing one numerator.
inline std::vector<Biquad> sections(const std::vector<cplx>& poles, Biquad numerator) {
  std::vector<Biquad> sos;
  for (const auto& p : poles) {
    if (p.imag() <= 0.0) continue;
    Biquad s = numerator;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    sos.push_back(s);
  }
  return sos;
}

inline void normalize_gain(std::vector<Biquad>& sos, double f_ref, double fs) {
  const double g = 1.0 / std::abs(response(sos, f_ref, fs));
  sos.front().b0 *= g;
  sos.front().b1 *= g;
  sos.front().b2 *= g;
}

}  // namespace detail

/// Butterworth low-pass of even order as cascaded biquads (bilinear transform with prewarping).
inline std::vector<Biquad> butter_lowpass(int order, double fc, double fs) {
  require(order >= 2 && order % 2 == 0, ErrorKind::ConfigError, "filter order must be even and >= 2");
  require(fc > 0.0 && fc < fs / 2.0, ErrorKind::InvalidBand, "cutoff must lie inside (0, Nyquist)");
  const double wc = detail::prewarp(fc, fs);
  std::vector<detail::cplx> z;
  for (const auto& p : detail::butter_prototype(order)) z.push_back(detail::bilinear(wc * p, fs));
  auto sos = detail::sections(z, {1.0, 2.0, 1.0, 0.0, 0.0});
  detail::normalize_gain(sos, 0.0, fs);
  return sos;
}

/// Butterworth band-pass built from an order-N low-pass prototype (2N poles).
inline std::vector<Biquad> butter_bandpass(int order, double lo, double hi, double fs) {
  require(order >= 2 && order % 2 == 0, ErrorKind::ConfigError, "filter order must be even and >= 2");
  require(lo > 0.0 && lo < hi && hi < fs / 2.0, ErrorKind::InvalidBand, "band edges must satisfy 0 < lo < hi < Nyquist");
  const double w1 = detail::prewarp(lo, fs), w2 = detail::prewarp(hi, fs);
  const double w0 = std::sqrt(w1 * w2), bw = w2 - w1;
  std::vector<detail::cplx> z;
  for (const auto& p : detail::butter_prototype(order)) {
    const detail::cplx pb = p * bw / 2.0;
    const detail::cplx disc = std::sqrt(pb * pb - w0 * w0);
    z.push_back(detail::bilinear(pb + disc, fs));
    z.push_back(detail::bilinear(pb - disc, fs));
  }
  auto sos = detail::sections(z, {1.0, 0.0, -1.0, 0.0, 0.0});
  detail::normalize_gain(sos, 2.0 * fs * std::atan(w0 / (2.0 * fs)) / (2.0 * std::numbers::pi), fs);
  return sos;
}

/// Fourth-order design for a canonical band; a band starting at 0 Hz becomes a low-pass.
inline std::vector<Biquad> band_filter(const FrequencyBand& band, double fs) {
  require(band.hi_hz < fs / 2.0, ErrorKind::InvalidBand,
          "band " + band.name + " reaches beyond the Nyquist frequency");
  return band.lo_hz <= 0.0 ? butter_lowpass(4, band.hi_hz, fs) : butter_bandpass(4, band.lo_hz, band.hi_hz, fs);
}

/// One causal pass in transposed direct form II, starting from the step
/// steady state for the first sample.
inline void sosfilt(const std::vector<Biquad>& sos, double* x, std::size_t n) {
  if (n == 0) return;
  double u = x[0];
  for (const auto& s : sos) {
    const double dc_den = 1.0 + s.a1 + s.a2;
    const double y = dc_den != 0.0 ? u * (s.b0 + s.b1 + s.b2) / dc_den : 0.0;
    double z1 = y - s.b0 * u, z2 = s.b2 * u - s.a2 * y;
    for (std::size_t i = 0; i < n; ++i) {
      const double in = x[i];
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      x[i] = out;
    }
    u = y;
  }
}

/// Zero-phase forward-backward filtering with odd reflection at both ends.
inline std::vector<double> filtfilt(const std::vector<Biquad>& sos, const double* x, std::size_t n) {
  require(n >= 2, ErrorKind::InsufficientData, "filtfilt needs at least two samples");
  const std::size_t pad = std::min<std::size_t>(3 * (2 * sos.size() + 1), n - 1);
  std::vector<double> ext(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
  std::copy(x, x + n, ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  sosfilt(sos, ext.data(), ext.size());
  std::reverse(ext.begin(), ext.end());
  sosfilt(sos, ext.data(), ext.size());
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

inline Epochs bandpass(const Epochs& e, const FrequencyBand& band) {
  e.validate();
  const auto sos = band_filter(band, e.sample_rate_hz);
  Epochs out = e;
  for (std::size_t t = 0; t < e.trials; ++t)
    for (std::size_t c = 0; c < e.channels; ++c) {
      const auto y = filtfilt(sos, e.row(t, c), e.samples);
      std::copy(y.begin(), y.end(), out.row(t, c));
    }
  return out;
}

/// Magnitude response of a design at frequency f.
inline double gain_at(const std::vector<Biquad>& sos, double f, double fs) {
  return std::abs(detail::response(sos, f, fs));
}

}  // namespace mtd::fc
