#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "mtd/core/error.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/ersp/features.hpp"
#include "mtd/nn/model.hpp"

namespace mtd::nn {

/// Sequence-regression examples. Volumes are addressed by key so examples
/// that share a volume (overlapping windows) fetch it once per batch.
struct ExampleSource {
  std::size_t count = 0;
  std::size_t seq_len = 0;
  std::size_t volume_size = 0;
  std::size_t outputs = 3;
  std::function<std::uint64_t(std::size_t example, std::size_t pos)> volume_key;
  std::function<void(std::uint64_t key, float* out)> volume;
  std::function<void(std::size_t example, float* y)> label;
  /// Examples in one group go to the same side of the train/validation split.
  std::function<std::size_t(std::size_t example)> group;
};

/// A training pair drawn from one of several feature sets.
struct SessionPair {
  std::size_t session = 0;
  ersp::TrainingPair pair;
};

/// Examples from session features: pair (trial, step) uses the volumes of
/// steps step - seq_len + 1 .. step. `axis` selects a single output. The
/// feature sets must outlive the returned source.
inline ExampleSource examples_from(std::vector<const ersp::SessionFeatures*> sessions, std::vector<SessionPair> pairs,
                                   std::size_t seq_len, std::optional<int> axis = std::nullopt) {
  require(!sessions.empty(), ErrorKind::MissingData, "no feature sets to train on");
  for (const auto* f : sessions) {
    require(seq_len >= 1 && seq_len - 1 <= f->history_steps, ErrorKind::InsufficientHistory,
            "features keep fewer history steps than the sequence length needs");
    require(f->volume_size() == sessions[0]->volume_size(), ErrorKind::ShapeError,
            "feature sets disagree on volume shape");
  }
  for (const auto& p : pairs)
    require(p.session < sessions.size() && p.pair.trial < sessions[p.session]->trials.size() &&
                p.pair.step < sessions[p.session]->steps,
            ErrorKind::OutOfBounds, "training pair outside its feature set");
  auto sets = std::make_shared<std::vector<const ersp::SessionFeatures*>>(std::move(sessions));
  auto shared = std::make_shared<std::vector<SessionPair>>(std::move(pairs));
  // key = session (16 bits) | trial (24 bits) | step + history (24 bits)
  auto key_of = [sets](std::size_t sess, std::size_t trial, long step) {
    const auto off = static_cast<long>((*sets)[sess]->history_steps);
    return (static_cast<std::uint64_t>(sess) << 48) | (static_cast<std::uint64_t>(trial) << 24) |
           static_cast<std::uint64_t>(step + off);
  };
  ExampleSource src;
  src.count = shared->size();
  src.seq_len = seq_len;
  src.volume_size = (*sets)[0]->volume_size();
  src.outputs = axis ? 1 : 3;
  src.volume_key = [shared, seq_len, key_of](std::size_t ex, std::size_t pos) {
    const auto& p = (*shared)[ex];
    const long step = static_cast<long>(p.pair.step) - static_cast<long>(seq_len - 1) + static_cast<long>(pos);
    return key_of(p.session, p.pair.trial, step);
  };
  src.volume = [sets](std::uint64_t key, float* out) {
    const auto sess = static_cast<std::size_t>(key >> 48);
    const auto trial = static_cast<std::size_t>((key >> 24) & 0xffffffu);
    const auto* f = (*sets)[sess];
    const long step = static_cast<long>(key & 0xffffffu) - static_cast<long>(f->history_steps);
    f->copy_volume(trial, step, out);
  };
  src.label = [sets, shared, axis](std::size_t ex, float* y) {
    const auto& p = (*shared)[ex];
    const Vec3& v = (*sets)[p.session]->trials[p.pair.trial].labels[p.pair.step];
    if (axis)
      y[0] = static_cast<float>(v[static_cast<std::size_t>(*axis)]);
    else
      for (std::size_t a = 0; a < 3; ++a) y[a] = static_cast<float>(v[a]);
  };
  src.group = [shared](std::size_t ex) {
    const auto& p = (*shared)[ex];
    return (p.session << 24) | p.pair.trial;
  };
  return src;
}

inline ExampleSource examples_from(const ersp::SessionFeatures& f, const std::vector<ersp::TrainingPair>& pairs,
                                   std::size_t seq_len, std::optional<int> axis = std::nullopt) {
  std::vector<SessionPair> sp;
  sp.reserve(pairs.size());
  for (const auto& p : pairs) sp.push_back({0, p});
  return examples_from(std::vector<const ersp::SessionFeatures*>{&f}, std::move(sp), seq_len, axis);
}

struct TrainOptions {
  double val_fraction = 0.2;
  int max_epochs = 12;
  int patience = 3;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 64;
};

struct TrainReport {
  int epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  bool stopped_early = false;
  int best_epoch = 0;  // 1-based; 0 before the first epoch

  double best_val_loss() const {
    return best_epoch > 0 ? val_loss[static_cast<std::size_t>(best_epoch - 1)] : std::numeric_limits<double>::infinity();
  }
};

/// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  template <class P, class G>
  void step(P& p, const G& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * gi;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * gi * gi;
      const double upd = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
      p[i] = static_cast<typename P::value_type>(static_cast<double>(p[i]) - upd);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Mini-batch trainer whose state persists between run() calls, so training
/// can be resumed to a larger epoch budget (successive-halving checkpoints).
class Trainer {
 public:
  Trainer(CnnLstm<float>& model, ExampleSource data, TrainOptions opt)
      : model_(model), data_(std::move(data)), opt_(opt),
        adam_(model.layout().total, model.hyper().learning_rate) {
    require(data_.seq_len == model.seq_len(), ErrorKind::ShapeError, "examples and model disagree on seq_len_steps");
    require(data_.volume_size == model.input_shape().size(), ErrorKind::ShapeError,
            "example volumes do not match the model input shape");
    require(data_.outputs == model.outputs(), ErrorKind::ShapeError, "examples and model disagree on outputs");
    require(opt_.max_epochs >= 1 && opt_.max_epochs <= 12, ErrorKind::ConfigError, "max_epochs must be in 1..12");
    require(opt_.patience >= 1, ErrorKind::ConfigError, "patience must be >= 1");
    const auto batch = static_cast<std::size_t>(model.hyper().batch_size);
    require(data_.count >= 2 * batch, ErrorKind::InsufficientData, "training needs at least two batches of examples");
    split();
    require(!train_.empty() && !val_.empty(), ErrorKind::InsufficientData, "train/validation split left a side empty");
    best_ = model_.params();
  }

  /// Trains until `epochs` total epochs have run, early stopping fires, or max_epochs is reached.
  const TrainReport& run(int epochs) {
    epochs = std::min(epochs, opt_.max_epochs);
    while (!done_ && report_.epochs_run < epochs) epoch();
    return report_;
  }

  bool done() const { return done_ || report_.epochs_run >= opt_.max_epochs; }
  const TrainReport& report() const { return report_; }
  const Buf<float>& best_params() const { return best_; }
  void restore_best() { model_.params() = best_; }
  std::size_t train_count() const { return train_.size(); }
  std::size_t val_count() const { return val_.size(); }

 private:
  void split() {
    Rng rng(substream(opt_.seed, "split"));
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < data_.count; ++i) groups[data_.group ? data_.group(i) : i].push_back(i);
    std::vector<std::size_t> keys;
    for (const auto& [k, v] : groups) keys.push_back(k);
    if (keys.size() >= 2) {
      rng.shuffle(keys.begin(), keys.end());
      auto n_val = static_cast<std::size_t>(std::llround(opt_.val_fraction * static_cast<double>(keys.size())));
      n_val = std::clamp<std::size_t>(n_val, 1, keys.size() - 1);
      for (std::size_t g = 0; g < keys.size(); ++g)
        for (auto i : groups[keys[g]]) (g < n_val ? val_ : train_).push_back(i);
    } else {
      std::vector<std::size_t> idx(data_.count);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(idx.begin(), idx.end());
      auto n_val = static_cast<std::size_t>(std::llround(opt_.val_fraction * static_cast<double>(idx.size())));
      n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
      val_.assign(idx.begin(), idx.begin() + static_cast<long>(n_val));
      train_.assign(idx.begin() + static_cast<long>(n_val), idx.end());
    }
    std::sort(train_.begin(), train_.end());
    std::sort(val_.begin(), val_.end());
  }

  // Loads the volumes of `examples` into pool_ (deduplicated) and fills batch + targets.
  void gather(const std::vector<std::size_t>& examples, Batch<float>& batch, Mat<float>& target) {
    std::map<std::uint64_t, std::size_t> slot;
    std::vector<std::uint64_t> order;
    batch.sequences.assign(examples.size(), std::vector<std::size_t>(data_.seq_len));
    for (std::size_t b = 0; b < examples.size(); ++b)
      for (std::size_t p = 0; p < data_.seq_len; ++p) {
        const auto key = data_.volume_key(examples[b], p);
        auto [it, fresh] = slot.emplace(key, order.size());
        if (fresh) order.push_back(key);
        batch.sequences[b][p] = it->second;
      }
    pool_.resize(order.size() * data_.volume_size);
    batch.volumes.resize(order.size());
    for (std::size_t v = 0; v < order.size(); ++v) {
      float* dst = pool_.data() + v * data_.volume_size;
      data_.volume(order[v], dst);
      batch.volumes[v] = dst;
    }
    target.resize(static_cast<Eigen::Index>(examples.size()), static_cast<Eigen::Index>(data_.outputs));
    for (std::size_t b = 0; b < examples.size(); ++b) data_.label(examples[b], target.row(static_cast<Eigen::Index>(b)).data());
  }

  double validation_loss() {
    double sse = 0.0;
    std::size_t n = 0;
    Batch<float> batch;
    Mat<float> target;
    for (std::size_t i = 0; i < val_.size(); i += opt_.eval_batch) {
      std::vector<std::size_t> ex(val_.begin() + static_cast<long>(i),
                                  val_.begin() + static_cast<long>(std::min(val_.size(), i + opt_.eval_batch)));
      gather(ex, batch, target);
      const Mat<float> y = model_.forward(batch);
      sse += static_cast<double>((y - target).cast<double>().squaredNorm());
      n += static_cast<std::size_t>(y.size());
    }
    return sse / static_cast<double>(n);
  }

  void epoch() {
    const int e = report_.epochs_run;
    std::vector<std::size_t> order = train_;
    Rng rng(substream(substream(opt_.seed, "epoch"), static_cast<std::uint64_t>(e)));
    rng.shuffle(order.begin(), order.end());
    const auto bs = static_cast<std::size_t>(model_.hyper().batch_size);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    Batch<float> batch;
    Mat<float> target;
    Buf<float> grad;
    std::uint64_t bi = 0;
    for (std::size_t i = 0; i < order.size(); i += bs, ++bi) {
      std::vector<std::size_t> ex(order.begin() + static_cast<long>(i),
                                  order.begin() + static_cast<long>(std::min(order.size(), i + bs)));
      gather(ex, batch, target);
      ForwardOptions fo{true, substream(substream(opt_.seed, "dropout"), (static_cast<std::uint64_t>(e) << 32) | bi)};
      const Mat<float> y = model_.forward(batch, fo);
      loss_sum += static_cast<double>(model_.loss(y, target)) * static_cast<double>(ex.size());
      seen += ex.size();
      model_.backward(target, grad);
      adam_.step(model_.params(), grad);
    }
    const double vl = validation_loss();
    report_.train_loss.push_back(loss_sum / static_cast<double>(seen));
    report_.val_loss.push_back(vl);
    ++report_.epochs_run;
    require(std::isfinite(vl), ErrorKind::DataError, "validation loss diverged");
    if (report_.best_epoch == 0 || vl < report_.best_val_loss()) {
      report_.best_epoch = report_.epochs_run;
      best_ = model_.params();
      stale_ = 0;
    } else if (++stale_ >= opt_.patience) {
      done_ = true;
      report_.stopped_early = report_.epochs_run < opt_.max_epochs;
    }
  }

  CnnLstm<float>& model_;
  ExampleSource data_;
  TrainOptions opt_;
  Adam adam_;
  std::vector<std::size_t> train_, val_;
  Buf<float> pool_;
  Buf<float> best_;
  TrainReport report_;
  int stale_ = 0;
  bool done_ = false;
};

/// Full training run with early stopping; the model ends at its best-validation weights.
inline TrainReport train(CnnLstm<float>& model, const ExampleSource& data, const TrainOptions& opt = {}) {
  Trainer t(model, data, opt);
  t.run(opt.max_epochs);
  t.restore_best();
  return t.report();
}

/// Streams one trial's volumes through the model; returns one output row per
/// decoding step 0 .. steps-1.
inline std::vector<std::vector<float>> decode_trial(const CnnLstm<float>& model, const ersp::SessionFeatures& f,
                                                    std::size_t trial) {
  const long warm = static_cast<long>(model.seq_len()) - 1;
  require(warm <= static_cast<long>(f.history_steps), ErrorKind::InsufficientHistory,
          "features keep fewer history steps than the model's warm-up");
  std::vector<float> buf(f.volume_size());
  StreamDecoder<float> dec(model);
  std::vector<std::vector<float>> out;
  out.reserve(f.steps);
  for (long step = -warm; step < static_cast<long>(f.steps); ++step) {
    f.copy_volume(trial, step, buf.data());
    if (auto y = dec.push(buf.data())) out.push_back(std::move(*y));
  }
  return out;
}

}  // namespace mtd::nn
