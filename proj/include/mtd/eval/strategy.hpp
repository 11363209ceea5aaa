#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mtd/core/format.hpp"
#include "mtd/core/parallel.hpp"
#include "mtd/core/rng.hpp"
#include "mtd/ersp/features.hpp"
#include "mtd/eval/score.hpp"
#include "mtd/nn/train.hpp"

// Evaluation strategies:
//   FDG  train once on the first session, decode every session with frozen weights
//   SAT  retrain on session k, decode session k + 1 (first entry decodes session 1 itself)
//   WSR  target-stratified k-fold cross-validation inside each session

namespace mtd::eval {

enum class StrategyKind { FDG, SAT, WSR };

inline std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::FDG: return "FDG";
    case StrategyKind::SAT: return "SAT";
    case StrategyKind::WSR: return "WSR";
  }
  return "?";
}

inline StrategyKind parse_strategy(std::string_view s) {
  if (s == "FDG" || s == "fdg") return StrategyKind::FDG;
  if (s == "SAT" || s == "sat") return StrategyKind::SAT;
  if (s == "WSR" || s == "wsr") return StrategyKind::WSR;
  fail(ErrorKind::ConfigError, "unknown strategy '" + std::string(s) + "'");
}

struct MapEntry {
  std::vector<int> train_sessions;
  int test_session = 0;
};

struct StrategySpec {
  StrategyKind kind = StrategyKind::WSR;
  std::vector<MapEntry> map;  // for WSR, train_sessions = {test_session}
  int folds = 5;

  /// Standard maps over sessions s_1 < s_2 < ...: FDG {s1 -> s1..s5}, SAT {s1 -> s1, s1 -> s2,
  /// s2 -> s3, ...}, WSR {s -> s}. At most five sessions are used.
  static StrategySpec standard(StrategyKind kind, std::vector<int> sessions) {
    require(!sessions.empty(), ErrorKind::MissingData, "no sessions to evaluate");
    std::sort(sessions.begin(), sessions.end());
    if (sessions.size() > 5) sessions.resize(5);
    StrategySpec s;
    s.kind = kind;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      switch (kind) {
        case StrategyKind::FDG: s.map.push_back({{sessions[0]}, sessions[i]}); break;
        case StrategyKind::SAT: s.map.push_back({{sessions[i == 0 ? 0 : i - 1]}, sessions[i]}); break;
        case StrategyKind::WSR: s.map.push_back({{sessions[i]}, sessions[i]}); break;
      }
    }
    return s;
  }
};

struct EvalOptions {
  nn::HyperParams hyper;
  nn::TrainOptions train;
  /// Keep every n-th decoding step as a training example.
  std::size_t pair_stride = 1;
  /// Three single-output models instead of one three-output model.
  bool per_axis = false;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
};

/// Fold index per trial. Each target's trials are shuffled and dealt round
/// robin, continuing where the previous target stopped, so every fold holds
/// each target equally often (+-1) and fold sizes differ by at most one.
inline std::vector<int> stratified_folds(const ersp::SessionFeatures& f, int k, std::uint64_t seed) {
  require(k >= 2, ErrorKind::ConfigError, "cross-validation needs at least 2 folds");
  require(f.trials.size() >= static_cast<std::size_t>(k), ErrorKind::InsufficientData,
          "fewer trials than cross-validation folds");
  std::map<int, std::vector<std::size_t>> by_target;
  for (std::size_t t = 0; t < f.trials.size(); ++t) by_target[f.trials[t].target_id].push_back(t);
  Rng rng(substream(substream(seed, "folds"), static_cast<std::uint64_t>(f.session_index)));
  std::vector<int> fold(f.trials.size(), -1);
  std::size_t next = 0;
  for (auto& [target, trials] : by_target) {
    rng.shuffle(trials.begin(), trials.end());
    for (auto t : trials) fold[t] = static_cast<int>(next++ % static_cast<std::size_t>(k));
  }
  return fold;
}

inline std::string params_hash(const nn::CnnLstm<float>& m) {
  const auto& p = m.params();
  return fmt::hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(float))));
}

/// One trained decoder: a three-output model or three single-axis models.
struct Decoder {
  std::vector<std::unique_ptr<nn::CnnLstm<float>>> models;
  std::vector<nn::TrainReport> reports;

  std::string hash() const {
    std::string h;
    for (const auto& m : models) h += params_hash(*m);
    return models.size() == 1 ? h : fmt::hex64(fnv1a64(h));
  }
};

/// Trains on the listed trials of each feature set (all trials where the list is empty).
inline Decoder train_decoder(const std::vector<const ersp::SessionFeatures*>& sets,
                             const std::vector<std::vector<std::size_t>>& trials, const EvalOptions& opt,
                             std::uint64_t unit_seed) {
  std::vector<nn::SessionPair> pairs;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (const auto& p : ersp::training_pairs(*sets[s], trials[s], opt.pair_stride)) pairs.push_back({s, p});
  const nn::InputShape shape{sets[0]->channels.size(), sets[0]->freqs_hz.size(), sets[0]->width};
  Decoder d;
  const int n_models = opt.per_axis ? 3 : 1;
  for (int a = 0; a < n_models; ++a) {
    nn::HyperParams h = opt.hyper;
    h.outputs = opt.per_axis ? 1 : 3;
    const std::uint64_t s = opt.per_axis ? substream(unit_seed, static_cast<std::uint64_t>(a)) : unit_seed;
    auto model = std::make_unique<nn::CnnLstm<float>>(h, shape, substream(s, "init"));
    auto src = nn::examples_from(sets, pairs, static_cast<std::size_t>(h.seq_len_steps),
                                 opt.per_axis ? std::optional<int>(a) : std::nullopt);
    nn::TrainOptions to = opt.train;
    to.seed = substream(s, "train");
    d.reports.push_back(nn::train(*model, src, to));
    d.models.push_back(std::move(model));
  }
  return d;
}

inline std::vector<TrialPrediction> decode_trials(const Decoder& d, const ersp::SessionFeatures& f,
                                                  const std::vector<std::size_t>& trials) {
  std::vector<TrialPrediction> out;
  for (auto t : trials) {
    const auto& tf = f.trials[t];
    TrialPrediction p{tf.trial_index, tf.target_id, tf.condition, std::vector<Vec3>(f.steps), tf.labels};
    for (std::size_t m = 0; m < d.models.size(); ++m) {
      const auto rows = nn::decode_trial(*d.models[m], f, t);
      for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t o = 0; o < rows[k].size(); ++o) p.decoded[k][d.models.size() == 1 ? o : m] = rows[k][o];
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace detail {

inline const ersp::SessionFeatures& find_session(const std::vector<const ersp::SessionFeatures*>& sessions, int index) {
  const ersp::SessionFeatures* found = nullptr;
  for (const auto* s : sessions)
    if (s->session_index == index) {
      require(found == nullptr, ErrorKind::ConfigError, "two feature sets share session " + std::to_string(index));
      found = s;
    }
  require(found != nullptr, ErrorKind::MissingData, "session " + std::to_string(index) + " is missing");
  return *found;
}

inline std::string train_key(const std::vector<int>& sessions) {
  std::string k = "train";
  for (int s : sessions) k += ":" + std::to_string(s);
  return k;
}

inline ScoringWindow window_of(const ersp::SessionFeatures& f) {
  return {0.0, static_cast<double>(f.steps) * f.hop_s, f.steps, f.hop_s};
}

inline std::vector<std::size_t> all_trials(const ersp::SessionFeatures& f) {
  std::vector<std::size_t> v(f.trials.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

}  // namespace detail

/// Runs several strategies over the same sessions; one report list per strategy,
/// one report per map entry, in map order.
///
/// Entries whose only training session is the test session (all of WSR, and
/// S1 -> 1 under FDG and SAT) get the stratified k-fold score, so a decoder is
/// never scored on its own training trials. Every other entry is scored by a
/// decoder trained on all trials of its training sessions. Fold models and
/// decoders are seeded by session and fold alone, so work shared between
/// specs runs once and each result matches a separate run. Units run on up to
/// opt.workers threads and merge by index: the output does not depend on the
/// worker count.
inline std::vector<std::vector<EvalReport>> run_strategies(const std::vector<StrategySpec>& specs,
                                                           const std::vector<const ersp::SessionFeatures*>& sessions,
                                                           const EvalOptions& opt) {
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::pair<int, int>> cv_keys;  // (test session, folds)
  std::vector<std::vector<int>> dec_keys;
  std::vector<std::vector<std::size_t>> cv_of(specs.size()), dec_of(specs.size());
  auto intern = [](auto& keys, const auto& k) {
    auto it = std::find(keys.begin(), keys.end(), k);
    if (it == keys.end()) it = keys.insert(keys.end(), k);
    return static_cast<std::size_t>(it - keys.begin());
  };
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    require(!spec.map.empty(), ErrorKind::ConfigError, "strategy map is empty");
    cv_of[s].assign(spec.map.size(), none);
    dec_of[s].assign(spec.map.size(), none);
    for (std::size_t e = 0; e < spec.map.size(); ++e) {
      const auto& m = spec.map[e];
      detail::find_session(sessions, m.test_session);
      const bool self = spec.kind == StrategyKind::WSR || m.train_sessions == std::vector<int>{m.test_session};
      if (self) cv_of[s][e] = intern(cv_keys, std::pair{m.test_session, spec.folds});
      if (spec.kind != StrategyKind::WSR) {
        require(!m.train_sessions.empty(), ErrorKind::ConfigError, "map entry without training sessions");
        dec_of[s][e] = intern(dec_keys, m.train_sessions);
      }
    }
  }

  struct FoldUnit {
    std::size_t key;
    int fold;
  };
  std::vector<FoldUnit> units;
  std::vector<std::vector<int>> folds(cv_keys.size());
  for (std::size_t k = 0; k < cv_keys.size(); ++k) {
    const auto& f = detail::find_session(sessions, cv_keys[k].first);
    folds[k] = stratified_folds(f, cv_keys[k].second, opt.seed);
    for (int i = 0; i < cv_keys[k].second; ++i) units.push_back({k, i});
  }
  std::vector<EvalReport> fold_reports(units.size());
  parallel_for(units.size(), opt.workers, [&](std::size_t u) {
    const auto& [k, i] = units[u];
    const auto& f = detail::find_session(sessions, cv_keys[k].first);
    std::vector<std::size_t> train, test;
    for (std::size_t t = 0; t < f.trials.size(); ++t) (folds[k][t] == i ? test : train).push_back(t);
    const std::uint64_t seed = substream(substream(opt.seed, "wsr:" + std::to_string(f.session_index)),
                                         static_cast<std::uint64_t>(i));
    const Decoder d = train_decoder({&f}, {train}, opt, seed);
    fold_reports[u] = score_trials(decode_trials(d, f, test), detail::window_of(f));
  });
  std::vector<EvalReport> cv_reports(cv_keys.size());
  for (std::size_t k = 0; k < cv_keys.size(); ++k) {
    std::vector<EvalReport> fr;
    for (std::size_t u = 0; u < units.size(); ++u)
      if (units[u].key == k) fr.push_back(fold_reports[u]);
    cv_reports[k] = combine_folds(fr);
  }

  std::vector<Decoder> decoders(dec_keys.size());
  parallel_for(dec_keys.size(), opt.workers, [&](std::size_t i) {
    std::vector<const ersp::SessionFeatures*> sets;
    for (int s : dec_keys[i]) sets.push_back(&detail::find_session(sessions, s));
    decoders[i] = train_decoder(sets, std::vector<std::vector<std::size_t>>(sets.size()), opt,
                                substream(opt.seed, detail::train_key(dec_keys[i])));
  });

  std::vector<std::vector<EvalReport>> out(specs.size());
  std::vector<std::pair<std::size_t, std::size_t>> decode_units;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    out[s].resize(specs[s].map.size());
    for (std::size_t e = 0; e < specs[s].map.size(); ++e)
      if (cv_of[s][e] == none) decode_units.emplace_back(s, e);
  }
  parallel_for(decode_units.size(), opt.workers, [&](std::size_t i) {
    const auto [s, e] = decode_units[i];
    const auto& f = detail::find_session(sessions, specs[s].map[e].test_session);
    out[s][e] = score_trials(decode_trials(decoders[dec_of[s][e]], f, detail::all_trials(f)), detail::window_of(f));
  });

  for (std::size_t s = 0; s < specs.size(); ++s)
    for (std::size_t e = 0; e < specs[s].map.size(); ++e) {
      auto& r = out[s][e];
      if (cv_of[s][e] != none) r = cv_reports[cv_of[s][e]];
      if (dec_of[s][e] != none) r.model_hash = decoders[dec_of[s][e]].hash();
      const auto& f = detail::find_session(sessions, specs[s].map[e].test_session);
      r.participant_id = f.participant_id;
      r.session_index = f.session_index;
      r.modality = f.modality;
      r.strategy = std::string(to_string(specs[s].kind));
      r.train_sessions = specs[s].map[e].train_sessions;
    }
  return out;
}

inline std::vector<EvalReport> run_strategy(const StrategySpec& spec,
                                            const std::vector<const ersp::SessionFeatures*>& sessions,
                                            const EvalOptions& opt) {
  return run_strategies({spec}, sessions, opt).front();
}

/// Unweighted mean of the reports' overall r (the strategy aggregate).
inline double mean_overall(const std::vector<EvalReport>& reports) {
  std::vector<double> v;
  for (const auto& r : reports) v.push_back(r.overall);
  return mean(v);
}

}  // namespace mtd::eval
