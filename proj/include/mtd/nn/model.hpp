#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/nn/hyper.hpp"
#include "mtd/nn/layers.hpp"

// CNN-LSTM velocity regressor.
//
// Each input volume (channels x freq x time) passes through the conv stack
// (conv -> activation -> 2x2 max-pool per layer), is flattened and dropped
// out. A sequence of seq_len such feature vectors runs through the stacked
// LSTM (dropout between layers) and a dense layer maps the last hidden state
// to the outputs.

namespace mtd::nn {

struct InputShape {
  std::size_t channels = 17, height = 40, width = 40;
  std::size_t size() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool bias = false;
};

struct ParamLayout {
  std::vector<ParamEntry> entries;
  std::size_t total = 0;

  std::size_t add(std::string name, std::vector<std::size_t> shape, bool bias) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    entries.push_back({std::move(name), std::move(shape), total, n, bias});
    total += n;
    return entries.size() - 1;
  }

  const ParamEntry& at(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    fail(ErrorKind::ShapeError, "no parameter named " + std::string(name));
  }
};

struct ForwardOptions {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

/// Volumes are referenced by index so a volume shared by several sequences is
/// processed once per batch.
template <class T>
struct Batch {
  std::vector<const T*> volumes;
  std::vector<std::vector<std::size_t>> sequences;
};

template <class T>
class CnnLstm {
 public:
  CnnLstm(const HyperParams& hyper, const InputShape& shape, std::uint64_t seed)
      : hyper_(hyper), shape_(shape), seed_(seed) {
    hyper_.validate();
    build();
    init();
  }

  const HyperParams& hyper() const { return hyper_; }
  const InputShape& input_shape() const { return shape_; }
  std::uint64_t seed() const { return seed_; }
  const ParamLayout& layout() const { return layout_; }
  Buf<T>& params() { return params_; }
  const Buf<T>& params() const { return params_; }
  std::size_t feature_dim() const { return feat_dim_; }
  std::size_t outputs() const { return static_cast<std::size_t>(hyper_.outputs); }
  std::size_t seq_len() const { return static_cast<std::size_t>(hyper_.seq_len_steps); }
  bool has_tape() const { return tape_.has_value(); }

  /// Flattened conv-stack features of one volume (eval mode, no dropout).
  void cnn_features(const T* volume, T* out) const {
    VolumeTape vt;
    run_cnn(volume, vt, false);
    std::copy(vt.pooled.back().begin(), vt.pooled.back().end(), out);
  }

  /// LSTM + dense over a single sequence of feature vectors (eval mode).
  std::vector<T> head(const std::vector<const T*>& feats) const {
    require(feats.size() == seq_len(), ErrorKind::ShapeError, "feature sequence length differs from seq_len_steps");
    std::vector<Mat<T>> xs(feats.size(), Mat<T>(1, static_cast<Eigen::Index>(feat_dim_)));
    for (std::size_t t = 0; t < feats.size(); ++t)
      for (std::size_t i = 0; i < feat_dim_; ++i) xs[t](0, static_cast<Eigen::Index>(i)) = feats[t][i];
    Mat<T> y;
    std::vector<LstmCache<T>> caches;
    run_head(xs, y, caches, ForwardOptions{}, nullptr);
    return std::vector<T>(y.data(), y.data() + y.size());
  }

  /// B x outputs predictions. In train mode dropout is active and a tape is
  /// recorded for backward().
  Mat<T> forward(const Batch<T>& batch, const ForwardOptions& opt = {}) {
    const std::size_t S = seq_len();
    for (const auto& s : batch.sequences) {
      require(s.size() == S, ErrorKind::ShapeError, "sequence length differs from seq_len_steps");
      for (auto v : s) require(v < batch.volumes.size(), ErrorKind::ShapeError, "sequence references a missing volume");
    }
    tape_.reset();
    Tape tape;
    tape.train = opt.train;
    tape.seed = opt.dropout_seed;
    tape.sequences = batch.sequences;
    tape.volumes.resize(batch.volumes.size());
    const auto D = static_cast<Eigen::Index>(feat_dim_);
    std::vector<Buf<T>> feats(batch.volumes.size());
    for (std::size_t v = 0; v < batch.volumes.size(); ++v) {
      VolumeTape& vt = tape.volumes[v];
      vt.input = batch.volumes[v];
      run_cnn(vt.input, vt, opt.train);
      feats[v] = vt.pooled.back();
      if (opt.train && hyper_.dropout > 0.0) {
        vt.mask.resize(feat_dim_);
        dropout_mask(hyper_.dropout, opt.dropout_seed, kSiteCnn + v, vt.mask.data(), feat_dim_);
        for (std::size_t i = 0; i < feat_dim_; ++i) feats[v][i] *= vt.mask[i];
      }
    }
    const auto B = static_cast<Eigen::Index>(batch.sequences.size());
    std::vector<Mat<T>> xs(S, Mat<T>(B, D));
    for (std::size_t t = 0; t < S; ++t)
      for (Eigen::Index b = 0; b < B; ++b)
        xs[t].row(b) = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            feats[batch.sequences[static_cast<std::size_t>(b)][t]].data(), D);
    Mat<T> y;
    run_head(xs, y, tape.lstm, opt, &tape);
    if (opt.train) tape_ = std::move(tape);
    return y;
  }

  /// Mean squared error over batch and outputs, plus bias_reg * sum of squared biases.
  T loss(const Mat<T>& y, const Mat<T>& target) const {
    require(y.rows() == target.rows() && y.cols() == target.cols(), ErrorKind::ShapeError, "target shape mismatch");
    return (y - target).squaredNorm() / static_cast<T>(y.size()) + bias_penalty();
  }

  T bias_penalty() const {
    if (hyper_.bias_reg == 0.0) return T(0);
    T s = T(0);
    for (const auto& e : layout_.entries)
      if (e.bias)
        for (std::size_t i = 0; i < e.size; ++i) s += params_[e.offset + i] * params_[e.offset + i];
    return static_cast<T>(hyper_.bias_reg) * s;
  }

  /// Gradient of loss() for the last train-mode forward, written to `grad`
  /// (resized to the parameter count). Consumes the tape.
  void backward(const Mat<T>& target, Buf<T>& grad) {
    require(tape_.has_value(), ErrorKind::StateError, "backward needs a train-mode forward first");
    Tape tape = std::move(*tape_);
    tape_.reset();
    grad.assign(layout_.total, T(0));
    const Mat<T>& y = tape.y;
    require(target.rows() == y.rows() && target.cols() == y.cols(), ErrorKind::ShapeError, "target shape mismatch");
    const std::size_t S = seq_len();
    const auto B = y.rows();

    // dense
    Mat<T> dy = (y - target) * (T(2) / static_cast<T>(y.size()));
    const ParamEntry& dw = layout_.entries[dense_w_];
    const ParamEntry& dbias = layout_.entries[dense_b_];
    Mat<T> dh;
    dense_backward(tape.lstm.back().h[S], dy, P(dw), G(grad, dw), G(grad, dbias), &dh);

    // LSTM stack, top down
    const auto L = lstm_.size();
    std::vector<Mat<T>> dhs(S);
    for (std::size_t t = 0; t < S; ++t) dhs[t] = Mat<T>::Zero(B, static_cast<Eigen::Index>(lstm_[L - 1].hidden));
    dhs[S - 1] = dh;
    std::vector<Mat<T>> dxs;
    for (std::size_t l = L; l-- > 0;) {
      const LstmParams& lp = lstm_params_[l];
      lstm_backward(lstm_[l], tape.lstm[l], dhs, P(layout_.entries[lp.wx]), P(layout_.entries[lp.wh]),
                    G(grad, layout_.entries[lp.wx]), G(grad, layout_.entries[lp.wh]), G(grad, layout_.entries[lp.b]),
                    &dxs);
      if (l > 0) {
        for (std::size_t t = 0; t < S; ++t)
          if (!tape.between[l - 1].empty()) dxs[t].array() *= tape.between[l - 1][t].array();
        dhs = std::move(dxs);
      }
    }

    // scatter feature gradients to volumes
    const std::size_t V = tape.volumes.size();
    std::vector<Buf<T>> dfeat(V, Buf<T>(feat_dim_, T(0)));
    for (std::size_t t = 0; t < S; ++t)
      for (Eigen::Index b = 0; b < B; ++b) {
        auto& d = dfeat[tape.sequences[static_cast<std::size_t>(b)][t]];
        for (std::size_t i = 0; i < feat_dim_; ++i) d[i] += dxs[t](b, static_cast<Eigen::Index>(i));
      }

    // conv stack per volume
    Buf<T> cols(max_cols_), dpool, dact;
    for (std::size_t v = 0; v < V; ++v) {
      VolumeTape& vt = tape.volumes[v];
      dpool = std::move(dfeat[v]);
      if (!vt.mask.empty())
        for (std::size_t i = 0; i < feat_dim_; ++i) dpool[i] *= vt.mask[i];
      for (std::size_t l = conv_.size(); l-- > 0;) {
        const Conv2dShape& cs = conv_[l];
        dact.resize(cs.cout * cs.pixels());
        maxpool2_backward(dpool.data(), vt.arg[l].data(), vt.arg[l].size(), dact.data(), dact.size());
        const Buf<T>& a = vt.act[l];
        for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= activate_grad_from_output(hyper_.activation, a[i]);
        const T* x = l == 0 ? vt.input : vt.pooled[l - 1].data();
        const ParamEntry& w = layout_.entries[conv_params_[l].w];
        const ParamEntry& bb = layout_.entries[conv_params_[l].b];
        Buf<T> dx;
        if (l > 0) dx.resize(cs.cin * cs.pixels());
        conv2d_backward(cs, x, P(w), dact.data(), G(grad, w), G(grad, bb), l > 0 ? dx.data() : nullptr, cols.data());
        dpool = std::move(dx);
      }
    }

    if (hyper_.bias_reg != 0.0)
      for (const auto& e : layout_.entries)
        if (e.bias)
          for (std::size_t i = 0; i < e.size; ++i)
            grad[e.offset + i] += static_cast<T>(2.0 * hyper_.bias_reg) * params_[e.offset + i];
  }

  /// Zeroes every parameter (useful for tests).
  void zero() { std::fill(params_.begin(), params_.end(), T(0)); }

 private:
  static constexpr std::uint64_t kSiteCnn = 0;
  static constexpr std::uint64_t kSiteLstm = 1ull << 40;

  struct ConvParams {
    std::size_t w = 0, b = 0;
  };
  struct LstmParams {
    std::size_t wx = 0, wh = 0, b = 0;
  };
  struct VolumeTape {
    const T* input = nullptr;
    std::vector<Buf<T>> act;              // per layer, post-activation
    std::vector<Buf<T>> pooled;           // per layer
    std::vector<std::vector<std::uint32_t>> arg;  // per layer
    Buf<T> mask;
  };
  struct Tape {
    bool train = false;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::size_t>> sequences;
    std::vector<VolumeTape> volumes;
    std::vector<LstmCache<T>> lstm;
    std::vector<std::vector<Mat<T>>> between;  // dropout masks between LSTM layers
    Mat<T> y;
  };

  const T* P(const ParamEntry& e) const { return params_.data() + e.offset; }
  static T* G(Buf<T>& g, const ParamEntry& e) { return g.data() + e.offset; }

  void build() {
    require(shape_.channels > 0 && shape_.height > 0 && shape_.width > 0, ErrorKind::ShapeError, "empty input shape");
    std::size_t c = shape_.channels, h = shape_.height, w = shape_.width;
    const auto k = static_cast<std::size_t>(hyper_.kernel_size);
    for (int l = 0; l < hyper_.conv_layers; ++l) {
      require(h >= 2 && w >= 2, ErrorKind::ShapeError, "too many conv layers for the input size");
      Conv2dShape cs{c, static_cast<std::size_t>(hyper_.filters[static_cast<std::size_t>(l)]), h, w, k};
      conv_.push_back(cs);
      ConvParams p;
      p.w = layout_.add("conv" + std::to_string(l) + ".weight", {cs.cout, cs.cin, k, k}, false);
      p.b = layout_.add("conv" + std::to_string(l) + ".bias", {cs.cout}, true);
      conv_params_.push_back(p);
      max_cols_ = std::max(max_cols_, cs.patch() * cs.pixels());
      c = cs.cout;
      h /= 2;
      w /= 2;
    }
    feat_dim_ = c * h * w;
    std::size_t in = feat_dim_;
    for (int l = 0; l < hyper_.lstm_layers; ++l) {
      LstmShape ls{in, static_cast<std::size_t>(hyper_.lstm_units[static_cast<std::size_t>(l)]), hyper_.activation};
      lstm_.push_back(ls);
      LstmParams p;
      p.wx = layout_.add("lstm" + std::to_string(l) + ".wx", {ls.in, 4 * ls.hidden}, false);
      p.wh = layout_.add("lstm" + std::to_string(l) + ".wh", {ls.hidden, 4 * ls.hidden}, false);
      p.b = layout_.add("lstm" + std::to_string(l) + ".bias", {4 * ls.hidden}, true);
      lstm_params_.push_back(p);
      in = ls.hidden;
    }
    dense_w_ = layout_.add("dense.weight", {in, outputs()}, false);
    dense_b_ = layout_.add("dense.bias", {outputs()}, true);
    params_.assign(layout_.total, T(0));
  }

  // Weights uniform in +-1/sqrt(fan_in); biases zero except the LSTM forget gate at 1.
  void init() {
    Rng rng(substream(seed_, "init"));
    auto fill = [&](const ParamEntry& e, std::size_t fan_in) {
      const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < e.size; ++i) params_[e.offset + i] = static_cast<T>(rng.uniform(-a, a));
    };
    for (std::size_t l = 0; l < conv_.size(); ++l) fill(layout_.entries[conv_params_[l].w], conv_[l].patch());
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      fill(layout_.entries[lstm_params_[l].wx], lstm_[l].in);
      fill(layout_.entries[lstm_params_[l].wh], lstm_[l].hidden);
      const ParamEntry& b = layout_.entries[lstm_params_[l].b];
      for (std::size_t u = 0; u < lstm_[l].hidden; ++u) params_[b.offset + lstm_[l].hidden + u] = T(1);
    }
    fill(layout_.entries[dense_w_], lstm_.back().hidden);
  }

  void run_cnn(const T* input, VolumeTape& vt, bool keep) const {
    Buf<T> cols(max_cols_);
    vt.act.resize(conv_.size());
    vt.pooled.resize(conv_.size());
    vt.arg.resize(conv_.size());
    const T* x = input;
    for (std::size_t l = 0; l < conv_.size(); ++l) {
      const Conv2dShape& cs = conv_[l];
      Buf<T>& a = vt.act[l];
      a.resize(cs.cout * cs.pixels());
      conv2d_forward(cs, x, P(layout_.entries[conv_params_[l].w]), P(layout_.entries[conv_params_[l].b]), a.data(),
                     cols.data());
      for (T& v : a) v = activate(hyper_.activation, v);
      const std::size_t n_out = cs.cout * (cs.h / 2) * (cs.w / 2);
      vt.pooled[l].resize(n_out);
      vt.arg[l].resize(n_out);
      maxpool2_forward(a.data(), cs.cout, cs.h, cs.w, vt.pooled[l].data(), vt.arg[l].data());
      x = vt.pooled[l].data();
      if (!keep && l > 0) {
        vt.act[l - 1].clear();
        vt.pooled[l - 1].clear();
        vt.arg[l - 1].clear();
      }
    }
  }

  void run_head(const std::vector<Mat<T>>& xs, Mat<T>& y, std::vector<LstmCache<T>>& caches,
                const ForwardOptions& opt, Tape* tape) const {
    const std::size_t S = xs.size();
    caches.assign(lstm_.size(), LstmCache<T>{});
    if (tape) tape->between.assign(lstm_.size() > 0 ? lstm_.size() - 1 : 0, {});
    std::vector<Mat<T>> in = xs;
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      const LstmParams& lp = lstm_params_[l];
      lstm_forward(lstm_[l], in, P(layout_.entries[lp.wx]), P(layout_.entries[lp.wh]), P(layout_.entries[lp.b]),
                   caches[l]);
      if (l + 1 < lstm_.size()) {
        for (std::size_t t = 0; t < S; ++t) in[t] = caches[l].h[t + 1];
        if (opt.train && hyper_.dropout > 0.0) {
          std::vector<Mat<T>> masks(S);
          for (std::size_t t = 0; t < S; ++t) {
            masks[t].resize(in[t].rows(), in[t].cols());
            dropout_mask(hyper_.dropout, opt.dropout_seed, kSiteLstm + l * S + t, masks[t].data(),
                         static_cast<std::size_t>(masks[t].size()));
            in[t].array() *= masks[t].array();
          }
          if (tape) tape->between[l] = std::move(masks);
        }
      }
    }
    dense_forward(caches.back().h[S], P(layout_.entries[dense_w_]), P(layout_.entries[dense_b_]), outputs(), y);
    if (tape) tape->y = y;
  }

  HyperParams hyper_;
  InputShape shape_;
  std::uint64_t seed_ = 0;
  ParamLayout layout_;
  Buf<T> params_;
  std::vector<Conv2dShape> conv_;
  std::vector<ConvParams> conv_params_;
  std::vector<LstmShape> lstm_;
  std::vector<LstmParams> lstm_params_;
  std::size_t dense_w_ = 0, dense_b_ = 0;
  std::size_t feat_dim_ = 0;
  std::size_t max_cols_ = 0;
  std::optional<Tape> tape_;
};

/// Zero-lag streaming decoder. Each pushed volume's conv features enter a ring
/// of the last seq_len steps; once full, every push yields the prediction for
/// that window, identical to the batched forward on the same volumes.
template <class T>
class StreamDecoder {
 public:
  explicit StreamDecoder(const CnnLstm<T>& model) : model_(model) {}

  /// Returns the output for the window ending at this volume once warm.
  std::optional<std::vector<T>> push(const T* volume) {
    Buf<T> f(model_.feature_dim());
    model_.cnn_features(volume, f.data());
    ring_.push_back(std::move(f));
    if (ring_.size() > model_.seq_len()) ring_.pop_front();
    if (ring_.size() < model_.seq_len()) return std::nullopt;
    return current();
  }

  std::vector<T> current() const {
    require(ring_.size() == model_.seq_len(), ErrorKind::InsufficientHistory,
            "stream has fewer volumes than seq_len_steps");
    std::vector<const T*> seq;
    for (const auto& f : ring_) seq.push_back(f.data());
    return model_.head(seq);
  }

  /// Trial boundary: forget all history.
  void reset() { ring_.clear(); }
  bool warm() const { return ring_.size() == model_.seq_len(); }

 private:
  const CnnLstm<T>& model_;
  std::deque<Buf<T>> ring_;
};

/// Decodes a trial's volumes in order; one output per volume from index
/// seq_len - 1 on.
template <class T>
std::vector<std::vector<T>> infer_stream(const CnnLstm<T>& model, const std::vector<const T*>& volumes) {
  require(volumes.size() >= model.seq_len(), ErrorKind::InsufficientHistory,
          "stream shorter than the warm-up history of seq_len_steps volumes");
  StreamDecoder<T> dec(model);
  std::vector<std::vector<T>> out;
  out.reserve(volumes.size() - model.seq_len() + 1);
  for (const T* v : volumes)
    if (auto y = dec.push(v)) out.push_back(std::move(*y));
  return out;
}

}  // namespace mtd::nn
