#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/types.hpp"

// Morlet time-frequency power, dB baseline normalisation and the sliding
// image window that feeds the decoder.

namespace mtd::ersp {

enum class BaselineMode {
  /// Geometric mean of baseline power: the baseline frames average to 0 dB exactly.
  LogMean,
  /// Arithmetic mean of baseline power.
  Mean,
};

struct ErspConfig {
  std::vector<double> freqs_hz = default_freqs();
  double hop_s = 0.016;
  std::size_t image_width = 40;
  double lookback_s = 0.640;
  double wavelet_cycles = 7.0;
  /// Wavelet support in Gaussian standard deviations on each side.
  double support_sigmas = 3.5;
  BaselineMode baseline = BaselineMode::LogMean;
  double epsilon = 1e-12;
  std::vector<std::string> channels = montages::online17().channels();

  static std::vector<double> default_freqs() {
    std::vector<double> f;
    for (int i = 1; i <= 40; ++i) f.push_back(i);
    return f;
  }

  void validate() const {
    require(!freqs_hz.empty(), ErrorKind::ConfigError, "no ERSP frequencies");
    for (std::size_t i = 0; i < freqs_hz.size(); ++i) {
      require(freqs_hz[i] > 0.0, ErrorKind::ConfigError, "ERSP frequencies must be positive");
      if (i) require(freqs_hz[i] > freqs_hz[i - 1], ErrorKind::ConfigError, "ERSP frequencies must ascend");
    }
    require(hop_s > 0.0 && image_width > 0 && wavelet_cycles > 0.0 && support_sigmas > 0.0, ErrorKind::ConfigError,
            "ERSP hop, width, cycles and support must be positive");
    require(std::abs(static_cast<double>(image_width) * hop_s - lookback_s) < 1e-9, ErrorKind::ConfigError,
            "image_width * hop_s must equal lookback_s");
    require(epsilon > 0.0, ErrorKind::ConfigError, "epsilon must be positive");
    require(!channels.empty(), ErrorKind::ConfigError, "no ERSP channels");
  }
};

/// channels x freqs x frames array on a uniform frame grid t0 + k * hop.
struct TfArray {
  std::size_t channels = 0, freqs = 0, frames = 0;
  double t0_s = 0.0;
  double hop_s = 0.0;
  std::vector<double> data;
  /// Per frame: the longest wavelet ran past the stream and was zero-padded.
  std::vector<std::uint8_t> edge;

  TfArray() = default;
  TfArray(std::size_t c, std::size_t f, std::size_t k, double t0, double hop)
      : channels(c), freqs(f), frames(k), t0_s(t0), hop_s(hop), data(c * f * k, 0.0), edge(k, 0) {}

  double& at(std::size_t c, std::size_t f, std::size_t k) { return data[(c * freqs + f) * frames + k]; }
  double at(std::size_t c, std::size_t f, std::size_t k) const { return data[(c * freqs + f) * frames + k]; }
  const double* row(std::size_t c, std::size_t f) const { return data.data() + (c * freqs + f) * frames; }
  double time_of(std::size_t k) const { return t0_s + static_cast<double>(k) * hop_s; }
};

/// Complex Morlet filter bank sampled at one rate. Amplitude-normalised so a
/// unit sinusoid at a bank frequency has unit modulus response.
class MorletBank {
 public:
  MorletBank(const ErspConfig& cfg, double fs) {
    cfg.validate();
    require(fs > 0.0, ErrorKind::ConfigError, "sample rate must be positive");
    for (double f : cfg.freqs_hz) {
      const double sigma = cfg.wavelet_cycles / (2.0 * std::numbers::pi * f);
      const auto half = static_cast<std::size_t>(std::ceil(cfg.support_sigmas * sigma * fs));
      Kernel k;
      k.half = half;
      k.re.resize(2 * half + 1);
      k.im.resize(2 * half + 1);
      double gsum = 0.0;
      for (std::size_t i = 0; i <= 2 * half; ++i) {
        const double t = (static_cast<double>(i) - static_cast<double>(half)) / fs;
        const double g = std::exp(-0.5 * t * t / (sigma * sigma));
        gsum += g;
        k.re[i] = g * std::cos(2.0 * std::numbers::pi * f * t);
        k.im[i] = -g * std::sin(2.0 * std::numbers::pi * f * t);
      }
      const double a = 2.0 / gsum;
      for (std::size_t i = 0; i <= 2 * half; ++i) {
        k.re[i] *= a;
        k.im[i] *= a;
      }
      max_half_ = std::max(max_half_, half);
      kernels_.push_back(std::move(k));
    }
  }

  std::size_t size() const { return kernels_.size(); }
  std::size_t max_half() const { return max_half_; }

  /// |x * psi_f|^2 at sample `center` for every bank frequency; samples outside
  /// [0, n) count as zero. Returns true if any kernel was truncated.
  bool power_at(const double* x, std::size_t n, long long center, double* out) const {
    bool truncated = false;
    for (std::size_t fi = 0; fi < kernels_.size(); ++fi) {
      const Kernel& k = kernels_[fi];
      const long long h = static_cast<long long>(k.half);
      const long long lo = std::max<long long>(0, center - h);
      const long long hi = std::min<long long>(static_cast<long long>(n) - 1, center + h);
      truncated |= (lo != center - h) || (hi != center + h);
      double re = 0.0, im = 0.0;
      if (lo <= hi) {
        const double* xs = x + lo;
        const double* kr = k.re.data() + (lo - (center - h));
        const double* ki = k.im.data() + (lo - (center - h));
        const auto m = static_cast<std::size_t>(hi - lo + 1);
        for (std::size_t i = 0; i < m; ++i) {
          re += xs[i] * kr[i];
          im += xs[i] * ki[i];
        }
      }
      out[fi] = re * re + im * im;
    }
    return truncated;
  }

 private:
  struct Kernel {
    std::size_t half = 0;
    std::vector<double> re, im;
  };
  std::vector<Kernel> kernels_;
  std::size_t max_half_ = 0;
};

/// Power for the selected stream rows at frame times t0 + k * hop, k < frames.
inline TfArray tf_power_frames(const EegStream& eeg, const std::vector<std::size_t>& rows, const MorletBank& bank,
                               double t0_s, double hop_s, std::size_t frames) {
  TfArray out(rows.size(), bank.size(), frames, t0_s, hop_s);
  std::vector<double> tmp(bank.size());
  for (std::size_t k = 0; k < frames; ++k) {
    const long long center = eeg.sample_at(out.time_of(k));
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const bool cut = bank.power_at(eeg.channel(rows[c]), eeg.samples(), center, tmp.data());
      if (cut) out.edge[k] = 1;
      for (std::size_t f = 0; f < bank.size(); ++f) out.at(c, f, k) = tmp[f];
    }
  }
  return out;
}

/// Morlet power of every channel on the hop grid starting at the stream start.
inline TfArray tf_power(const EegStream& eeg, const ErspConfig& cfg) {
  MorletBank bank(cfg, eeg.sample_rate_hz());
  require(eeg.samples() >= 2 * bank.max_half() + 1, ErrorKind::InsufficientData,
          "EEG stream is shorter than the longest wavelet");
  const auto frames = static_cast<std::size_t>(std::floor(eeg.duration_s() / cfg.hop_s - 1e-9)) + 1;
  std::vector<std::size_t> rows(eeg.channels());
  for (std::size_t c = 0; c < rows.size(); ++c) rows[c] = c;
  return tf_power_frames(eeg, rows, bank, eeg.start_time_s(), cfg.hop_s, frames);
}

/// Half-open frame index range.
struct FrameRange {
  std::size_t begin = 0, end = 0;
  std::size_t size() const { return end > begin ? end - begin : 0; }
};

/// Frames whose time lies in [t_begin, t_end).
inline FrameRange frames_in(const TfArray& a, double t_begin, double t_end) {
  const double eps = 1e-9;
  auto first = [&](double t) {
    const double k = std::ceil((t - a.t0_s) / a.hop_s - eps);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(a.frames)));
  };
  return {first(t_begin), first(t_end)};
}

/// 10 log10(P / baseline) per (channel, freq), with power and baseline floored at epsilon.
inline TfArray baseline_normalize(const TfArray& power, FrameRange rest, BaselineMode mode = BaselineMode::LogMean,
                                  double epsilon = 1e-12) {
  require(rest.size() > 0 && rest.end <= power.frames, ErrorKind::InvalidBaseline, "empty baseline range");
  TfArray out = power;
  for (std::size_t c = 0; c < power.channels; ++c)
    for (std::size_t f = 0; f < power.freqs; ++f) {
      const double* p = power.row(c, f);
      double base_db = 0.0;
      if (mode == BaselineMode::LogMean) {
        for (std::size_t k = rest.begin; k < rest.end; ++k) base_db += std::log10(std::max(p[k], epsilon));
        base_db = 10.0 * base_db / static_cast<double>(rest.size());
      } else {
        double m = 0.0;
        for (std::size_t k = rest.begin; k < rest.end; ++k) m += p[k];
        base_db = 10.0 * std::log10(std::max(m / static_cast<double>(rest.size()), epsilon));
      }
      double* o = out.data.data() + (c * power.freqs + f) * power.frames;
      for (std::size_t k = 0; k < power.frames; ++k) o[k] = 10.0 * std::log10(std::max(p[k], epsilon)) - base_db;
    }
  return out;
}

/// channels x freqs x width images, time axis oldest -> newest.
struct ErspVolume {
  double step_time_s = 0.0;
  std::size_t channels = 0, freqs = 0, width = 0;
  std::vector<float> images;

  float at(std::size_t c, std::size_t f, std::size_t t) const { return images[(c * freqs + f) * width + t]; }
};

/// The `image_width` frames ending at the frame nearest `step_time_s`.
inline ErspVolume window_stack(const TfArray& ersp, double step_time_s, const ErspConfig& cfg) {
  const double kf = (step_time_s - ersp.t0_s) / ersp.hop_s;
  const long long k = std::llround(kf);
  require(std::abs(kf - static_cast<double>(k)) < 1e-6 && k >= 0 && k < static_cast<long long>(ersp.frames),
          ErrorKind::AlignmentError, "step time is not on the ERSP frame grid");
  require(k + 1 >= static_cast<long long>(cfg.image_width), ErrorKind::InsufficientHistory,
          "fewer ERSP frames than the image width before this step");
  ErspVolume v;
  v.step_time_s = step_time_s;
  v.channels = ersp.channels;
  v.freqs = ersp.freqs;
  v.width = cfg.image_width;
  v.images.resize(v.channels * v.freqs * v.width);
  const auto first = static_cast<std::size_t>(k + 1) - cfg.image_width;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t f = 0; f < v.freqs; ++f) {
      const double* src = ersp.row(c, f) + first;
      float* dst = v.images.data() + (c * v.freqs + f) * v.width;
      for (std::size_t t = 0; t < v.width; ++t) dst[t] = static_cast<float>(src[t]);
    }
  return v;
}

}  // namespace mtd::ersp
