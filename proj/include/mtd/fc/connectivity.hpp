#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/format.hpp"
#include "mtd/core/parallel.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/core/types.hpp"
#include "mtd/fc/filter.hpp"

// Sensor-space connectivity and band-power topography.
//
// EIC of a channel pair: the epoch is cut into Hann windows; in each window the
// cross-spectra are accumulated over trials, the coherency
// S_xy / sqrt(S_xx S_yy) is averaged over the band's frequency bins, and the
// EIC is the mean over windows of |Im| of that coherency. Zero-lag coupling
// (volume conduction) has a real coherency and contributes nothing.

namespace mtd::fc {

using cplx = std::complex<double>;

struct WindowSpec {
  double length_s = 0.5;
  double overlap = 0.5;
};

struct EpochPair {
  Epochs task;
  Epochs base;

  void validate() const {
    task.validate();
    base.validate();
    require(task.trials == base.trials, ErrorKind::ShapeError, "task and baseline trial counts differ");
    require(task.channels == base.channels && task.samples == base.samples, ErrorKind::ShapeError,
            "task and baseline epochs differ in shape");
    require(task.sample_rate_hz == base.sample_rate_hz, ErrorKind::ShapeError, "task and baseline sample rates differ");
  }
};

/// Where the two epochs sit relative to each trial's events.
struct EpochWindows {
  double length_s = 1.5;
  double task_offset_s = 0.0;  // from target onset
  double base_offset_s = 0.5;  // from rest onset, skipping the settling half second
};

/// Task and baseline epochs for every trial of a session, restricted to `channels`.
inline EpochPair epochs_from_session(const SessionDataset& s, const Montage& channels, const EpochWindows& w = {}) {
  const auto rows = s.montage.indices_of(channels);
  const double fs = s.eeg.sample_rate_hz();
  const auto n = static_cast<std::size_t>(std::llround(w.length_s * fs));
  require(n >= 2, ErrorKind::ConfigError, "epoch length too short");
  require(!s.trials.empty(), ErrorKind::InsufficientData, "session has no trials");
  EpochPair p{Epochs(s.trials.size(), rows.size(), n, fs), Epochs(s.trials.size(), rows.size(), n, fs)};
  auto cut = [&](Epochs& e, std::size_t t, double start) {
    const long long s0 = s.eeg.sample_at(start);
    require(s0 >= 0 && static_cast<std::size_t>(s0) + n <= s.eeg.samples(), ErrorKind::OutOfBounds,
            "epoch of trial " + std::to_string(s.trials[t].trial_index) + " leaves the recording");
    for (std::size_t c = 0; c < rows.size(); ++c)
      std::copy_n(s.eeg.channel(rows[c]) + s0, n, e.row(t, c));
  };
  for (std::size_t t = 0; t < s.trials.size(); ++t) {
    cut(p.task, t, s.trials[t].t_target_s + w.task_offset_s);
    cut(p.base, t, s.trials[t].t_rest_s + w.base_offset_s);
  }
  return p;
}

/// Windowed DFT coefficients at the band's bins, per (trial, channel, window, bin).
struct BandSpectra {
  std::size_t trials = 0, channels = 0, windows = 0, bins = 0;
  std::vector<double> freqs;
  std::vector<cplx> X;

  const cplx* trial(std::size_t t) const { return X.data() + t * channels * windows * bins; }
};

inline BandSpectra band_spectra(const Epochs& e, const FrequencyBand& band, const WindowSpec& ws = {}) {
  e.validate();
  const double fs = e.sample_rate_hz;
  require(band.hi_hz <= fs / 2.0, ErrorKind::InvalidBand, "band " + band.name + " reaches beyond the Nyquist frequency");
  require(ws.length_s > 0.0 && ws.overlap >= 0.0 && ws.overlap < 1.0, ErrorKind::ConfigError,
          "window length must be positive and overlap in [0, 1)");
  const auto L = static_cast<std::size_t>(std::llround(ws.length_s * fs));
  const std::size_t hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(L * (1.0 - ws.overlap))));
  const std::size_t W = e.samples >= L && L > 1 ? (e.samples - L) / hop + 1 : 0;
  require(W >= 2, ErrorKind::InsufficientData, "epochs hold fewer than two analysis windows");

  BandSpectra S;
  S.trials = e.trials;
  S.channels = e.channels;
  S.windows = W;
  std::vector<std::size_t> ks;
  for (std::size_t k = 1; 2 * k <= L; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(L);
    if (f >= band.lo_hz - 1e-9 && f <= band.hi_hz + 1e-9) {
      ks.push_back(k);
      S.freqs.push_back(f);
    }
  }
  require(!ks.empty(), ErrorKind::InvalidBand, "band " + band.name + " contains no frequency bin at this window length");
  S.bins = ks.size();

  std::vector<double> hann(L);
  for (std::size_t i = 0; i < L; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(L));
  std::vector<cplx> twiddle(ks.size() * L);
  for (std::size_t b = 0; b < ks.size(); ++b)
    for (std::size_t i = 0; i < L; ++i)
      twiddle[b * L + i] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((ks[b] * i) % L) / static_cast<double>(L));

  S.X.resize(e.trials * e.channels * W * S.bins);
  std::vector<double> seg(L);
  for (std::size_t t = 0; t < e.trials; ++t)
    for (std::size_t c = 0; c < e.channels; ++c)
      for (std::size_t w = 0; w < W; ++w) {
        const double* x = e.row(t, c) + w * hop;
        double mean = 0.0;
        for (std::size_t i = 0; i < L; ++i) mean += x[i];
        mean /= static_cast<double>(L);
        for (std::size_t i = 0; i < L; ++i) seg[i] = (x[i] - mean) * hann[i];
        cplx* out = S.X.data() + ((t * e.channels + c) * W + w) * S.bins;
        for (std::size_t b = 0; b < S.bins; ++b) {
          cplx acc = 0.0;
          const cplx* tw = twiddle.data() + b * L;
          for (std::size_t i = 0; i < L; ++i) acc += seg[i] * tw[i];
          out[b] = acc;
        }
      }
  return S;
}

/// Symmetric channel x channel matrix, row-major, zero diagonal.
struct ChannelMatrix {
  std::size_t n = 0;
  std::vector<double> v;

  explicit ChannelMatrix(std::size_t size = 0) : n(size), v(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * n + j]; }
};

namespace detail {

// EIC matrix from one coefficient block per trial (each channels x windows x bins).
inline ChannelMatrix eic_from_rows(const std::vector<const cplx*>& rows, std::size_t C, std::size_t W, std::size_t B) {
  const std::size_t stride = W * B;
  std::vector<double> auto_p(C * stride, 0.0);
  for (const cplx* r : rows)
    for (std::size_t i = 0; i < C * stride; ++i) auto_p[i] += std::norm(r[i]);
  ChannelMatrix m(C);
  std::vector<cplx> cross(stride);
  for (std::size_t a = 0; a < C; ++a)
    for (std::size_t b = a + 1; b < C; ++b) {
      std::fill(cross.begin(), cross.end(), cplx{});
      for (const cplx* r : rows) {
        const cplx* xa = r + a * stride;
        const cplx* xb = r + b * stride;
        for (std::size_t i = 0; i < stride; ++i) cross[i] += xa[i] * std::conj(xb[i]);
      }
      double eic = 0.0;
      for (std::size_t w = 0; w < W; ++w) {
        double im = 0.0;
        for (std::size_t k = 0; k < B; ++k) {
          const std::size_t i = w * B + k;
          const double den = std::sqrt(auto_p[a * stride + i] * auto_p[b * stride + i]);
          if (den > 0.0) im += cross[i].imag() / den;
        }
        eic += std::abs(im / static_cast<double>(B));
      }
      m(a, b) = m(b, a) = std::min(1.0, eic / static_cast<double>(W));
    }
  return m;
}

inline std::vector<const cplx*> all_rows(const BandSpectra& S) {
  std::vector<const cplx*> rows;
  for (std::size_t t = 0; t < S.trials; ++t) rows.push_back(S.trial(t));
  return rows;
}

}  // namespace detail

inline ChannelMatrix eic_matrix(const BandSpectra& S) {
  return detail::eic_from_rows(detail::all_rows(S), S.channels, S.windows, S.bins);
}

inline ChannelMatrix eic_matrix(const Epochs& e, const FrequencyBand& band, const WindowSpec& ws = {}) {
  return eic_matrix(band_spectra(e, band, ws));
}

/// EIC between two single-channel epoch sets with matching trials.
inline double eic_pair(const Epochs& x, const Epochs& y, const FrequencyBand& band, const WindowSpec& ws = {}) {
  x.validate();
  y.validate();
  require(x.channels == 1 && y.channels == 1, ErrorKind::ShapeError, "eic_pair takes single-channel epochs");
  require(x.trials == y.trials && x.samples == y.samples && x.sample_rate_hz == y.sample_rate_hz,
          ErrorKind::ShapeError, "eic_pair inputs differ in shape");
  Epochs both(x.trials, 2, x.samples, x.sample_rate_hz);
  for (std::size_t t = 0; t < x.trials; ++t) {
    std::copy_n(x.row(t, 0), x.samples, both.row(t, 0));
    std::copy_n(y.row(t, 0), y.samples, both.row(t, 1));
  }
  return eic_matrix(both, band, ws)(0, 1);
}

struct PermutationOptions {
  std::size_t n_perm = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  double display_threshold = 0.55;
  WindowSpec window;
  std::size_t workers = 1;
};

struct ConnectivityResult {
  FrequencyBand band;
  ChannelMatrix eic_task, eic_base, eic_diff;
  std::vector<bool> significant, displayed;  // row-major, channels x channels
  double null_threshold = 0.0;               // (1 - alpha) quantile of the max-|diff| null
  std::vector<double> null_max;              // per permutation, in permutation order
  std::size_t n_perm = 0;
  bool few_permutations = false;             // n_perm < 100: threshold is coarse

  bool is_significant(std::size_t a, std::size_t b) const { return significant[a * eic_task.n + b]; }
  bool is_displayed(std::size_t a, std::size_t b) const { return displayed[a * eic_task.n + b]; }
};

/// Max-statistic permutation test on the task-minus-baseline EIC. Each
/// permutation swaps the task and baseline epochs of every trial with
/// probability 1/2, from a stream keyed by the permutation index. A pair is
/// significant when |diff| exceeds the (1 - alpha) quantile of the null's
/// maximum |diff| over all pairs; it is displayed when it is significant and
/// diff exceeds the display threshold.
inline ConnectivityResult permutation_test(const EpochPair& ep, const FrequencyBand& band,
                                           const PermutationOptions& opt = {}) {
  ep.validate();
  require(opt.n_perm >= 1, ErrorKind::ConfigError, "n_perm must be >= 1");
  require(opt.alpha > 0.0 && opt.alpha < 1.0, ErrorKind::ConfigError, "alpha must be in (0, 1)");
  require(ep.task.channels >= 2, ErrorKind::ShapeError, "connectivity needs at least two channels");
  const BandSpectra St = band_spectra(ep.task, band, opt.window);
  const BandSpectra Sb = band_spectra(ep.base, band, opt.window);
  const std::size_t C = St.channels, T = St.trials;

  ConnectivityResult r;
  r.band = band;
  r.n_perm = opt.n_perm;
  r.few_permutations = opt.n_perm < 100;
  r.eic_task = eic_matrix(St);
  r.eic_base = eic_matrix(Sb);
  r.eic_diff = ChannelMatrix(C);
  for (std::size_t i = 0; i < C * C; ++i) r.eic_diff.v[i] = r.eic_task.v[i] - r.eic_base.v[i];

  r.null_max.assign(opt.n_perm, 0.0);
  const std::uint64_t perm_seed = substream(opt.seed, "permutation");
  parallel_for(opt.n_perm, opt.workers, [&](std::size_t p) {
    Rng rng(substream(perm_seed, static_cast<std::uint64_t>(p)));
    std::vector<const cplx*> a(T), b(T);
    for (std::size_t t = 0; t < T; ++t) {
      const bool swap = rng.below(2) == 1;
      a[t] = swap ? Sb.trial(t) : St.trial(t);
      b[t] = swap ? St.trial(t) : Sb.trial(t);
    }
    const auto ma = detail::eic_from_rows(a, C, St.windows, St.bins);
    const auto mb = detail::eic_from_rows(b, C, St.windows, St.bins);
    double mx = 0.0;
    for (std::size_t i = 0; i < C * C; ++i) mx = std::max(mx, std::abs(ma.v[i] - mb.v[i]));
    r.null_max[p] = mx;
  });

  std::vector<double> sorted = r.null_max;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = static_cast<std::size_t>(std::ceil((1.0 - opt.alpha) * static_cast<double>(opt.n_perm) - 1e-9));
  r.null_threshold = sorted[std::clamp<std::size_t>(idx, 1, opt.n_perm) - 1];

  r.significant.assign(C * C, false);
  r.displayed.assign(C * C, false);
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      if (i == j) continue;
      const double d = r.eic_diff(i, j);
      const bool sig = std::abs(d) > r.null_threshold;
      r.significant[i * C + j] = sig;
      r.displayed[i * C + j] = sig && d > opt.display_threshold;
    }
  return r;
}

struct TopoResult {
  FrequencyBand band;
  std::vector<double> db;      // montage order
  std::vector<bool> floored;   // baseline power hit the floor on this channel
};

/// Movement-minus-rest band power per channel: 10 log10 of mean task power over
/// mean baseline power, pooling trials of all supplied sessions.
inline TopoResult band_power_topo(const std::vector<EpochPair>& sessions, const FrequencyBand& band,
                                  double floor = 1e-20) {
  require(!sessions.empty(), ErrorKind::InsufficientData, "no epochs supplied");
  const std::size_t C = sessions.front().task.channels;
  std::vector<double> task(C, 0.0), base(C, 0.0);
  std::size_t trials = 0;
  for (const auto& ep : sessions) {
    ep.validate();
    require(ep.task.channels == C, ErrorKind::ShapeError, "sessions differ in channel count");
    const Epochs ft = bandpass(ep.task, band), fb = bandpass(ep.base, band);
    for (std::size_t t = 0; t < ft.trials; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        double pt = 0.0, pb = 0.0;
        for (std::size_t i = 0; i < ft.samples; ++i) {
          pt += ft.row(t, c)[i] * ft.row(t, c)[i];
          pb += fb.row(t, c)[i] * fb.row(t, c)[i];
        }
        task[c] += pt / static_cast<double>(ft.samples);
        base[c] += pb / static_cast<double>(fb.samples);
      }
    trials += ep.task.trials;
  }
  require(trials > 0, ErrorKind::InsufficientData, "no trials supplied");
  TopoResult r;
  r.band = band;
  for (std::size_t c = 0; c < C; ++c) {
    const double b = base[c] / static_cast<double>(trials);
    const double t = task[c] / static_cast<double>(trials);
    r.floored.push_back(b < floor);
    r.db.push_back(10.0 * std::log10(std::max(t, floor) / std::max(b, floor)));
  }
  return r;
}

inline std::string edge_csv(const std::vector<ConnectivityResult>& results, const Montage& m, bool header = true) {
  std::ostringstream os;
  if (header) os << "band,ch_a,ch_b,eic_task,eic_base,diff,significant,displayed\n";
  for (const auto& r : results) {
    require(r.eic_task.n == m.size(), ErrorKind::ShapeError, "montage does not match the connectivity matrix");
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b)
        os << r.band.name << ',' << m.channels()[a] << ',' << m.channels()[b] << ',' << fmt::num(r.eic_task(a, b))
           << ',' << fmt::num(r.eic_base(a, b)) << ',' << fmt::num(r.eic_diff(a, b)) << ','
           << (r.is_significant(a, b) ? 1 : 0) << ',' << (r.is_displayed(a, b) ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string topo_csv(const std::vector<TopoResult>& results, const Montage& m, bool header = true) {
  std::ostringstream os;
  if (header) os << "band,channel,db\n";
  for (const auto& r : results) {
    require(r.db.size() == m.size(), ErrorKind::ShapeError, "montage does not match the topography");
    for (std::size_t c = 0; c < m.size(); ++c) os << r.band.name << ',' << m.channels()[c] << ',' << fmt::num(r.db[c]) << '\n';
  }
  return os.str();
}

}  // namespace mtd::fc
