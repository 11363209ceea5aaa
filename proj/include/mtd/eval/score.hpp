#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtd/core/error.hpp"
#include "mtd/core/types.hpp"
#include "mtd/eval/stats.hpp"

namespace mtd::eval {

inline constexpr int kReportFormatVersion = 1;
inline constexpr std::array<const char*, 3> kAxisNames{"x", "y", "z"};

/// Decoded and label velocities of one trial over the scoring window.
struct TrialPrediction {
  int trial_index = 0;
  int target_id = 0;
  Condition condition = Condition::Executed;
  std::vector<Vec3> decoded;
  std::vector<Vec3> labels;
};

struct TrialScore {
  int trial_index = 0;
  int target_id = 0;
  Condition condition = Condition::Executed;
  int fold = -1;
  /// Empty where the correlation is undefined (constant series).
  std::array<std::optional<double>, 3> r;
};

struct ScoringWindow {
  double start_s = 0.0;  // relative to target onset
  double duration_s = 2.0;
  std::size_t steps = 0;
  double step_s = 0.016;
};

struct EvalReport {
  std::string participant_id;
  int session_index = 0;
  Modality modality = Modality::Screen;
  std::string strategy;
  std::vector<int> train_sessions;
  ScoringWindow window;
  std::array<double, 3> axis_r{};
  double overall = 0.0;
  std::map<int, std::array<double, 3>> per_target;
  std::vector<TrialScore> trials;
  std::size_t excluded = 0;  // (trial, axis) cells with undefined r
  std::vector<std::array<double, 3>> fold_axis_r;
  std::string model_hash;
};

namespace detail {

inline double mean_or_nan(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : mean(v);
}

// Per-target means per axis, then axis = mean over targets, overall = mean over axes.
inline void aggregate(EvalReport& rep) {
  std::map<int, std::array<std::vector<double>, 3>> by_target;
  rep.excluded = 0;
  for (const auto& t : rep.trials)
    for (std::size_t a = 0; a < 3; ++a) {
      if (t.r[a])
        by_target[t.target_id][a].push_back(*t.r[a]);
      else
        ++rep.excluded;
    }
  rep.per_target.clear();
  for (const auto& [target, axes] : by_target)
    for (std::size_t a = 0; a < 3; ++a) rep.per_target[target][a] = mean_or_nan(axes[a]);
  for (std::size_t a = 0; a < 3; ++a) {
    std::vector<double> v;
    for (const auto& [target, r] : rep.per_target)
      if (!std::isnan(r[a])) v.push_back(r[a]);
    rep.axis_r[a] = mean_or_nan(v);
  }
  rep.overall = (rep.axis_r[0] + rep.axis_r[1] + rep.axis_r[2]) / 3.0;
}

}  // namespace detail

/// Per-trial, per-axis r between decoded and label velocity; per-target and
/// axis decoding accuracy. Trials with an undefined r are excluded and counted.
inline EvalReport score_trials(const std::vector<TrialPrediction>& preds, const ScoringWindow& window = {}) {
  require(!preds.empty(), ErrorKind::InsufficientData, "no trials to score");
  EvalReport rep;
  rep.window = window;
  for (const auto& p : preds) {
    require(p.decoded.size() == p.labels.size(), ErrorKind::ShapeError, "decoded and label series differ in length");
    TrialScore s{p.trial_index, p.target_id, p.condition, -1, {}};
    std::vector<double> d(p.decoded.size()), l(p.labels.size());
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t k = 0; k < d.size(); ++k) {
        d[k] = p.decoded[k][a];
        l[k] = p.labels[k][a];
      }
      try {
        s.r[a] = pearson_r(d, l);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UndefinedCorrelation) throw;
      }
    }
    rep.trials.push_back(s);
  }
  if (rep.window.steps == 0) rep.window.steps = preds.front().decoded.size();
  detail::aggregate(rep);
  return rep;
}

/// Session report from cross-validation folds: axis and per-target values are
/// fold means; trial scores are pooled and tagged with their fold.
inline EvalReport combine_folds(const std::vector<EvalReport>& folds) {
  require(!folds.empty(), ErrorKind::InsufficientData, "no folds to combine");
  EvalReport rep = folds.front();
  rep.trials.clear();
  rep.per_target.clear();
  rep.fold_axis_r.clear();
  rep.excluded = 0;
  std::map<int, std::array<std::vector<double>, 3>> targets;
  std::array<std::vector<double>, 3> axes;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    for (auto t : folds[f].trials) {
      t.fold = static_cast<int>(f);
      rep.trials.push_back(t);
    }
    rep.excluded += folds[f].excluded;
    rep.fold_axis_r.push_back(folds[f].axis_r);
    for (const auto& [target, r] : folds[f].per_target)
      for (std::size_t a = 0; a < 3; ++a)
        if (!std::isnan(r[a])) targets[target][a].push_back(r[a]);
    for (std::size_t a = 0; a < 3; ++a)
      if (!std::isnan(folds[f].axis_r[a])) axes[a].push_back(folds[f].axis_r[a]);
  }
  std::sort(rep.trials.begin(), rep.trials.end(),
            [](const TrialScore& a, const TrialScore& b) { return a.trial_index < b.trial_index; });
  for (const auto& [target, v] : targets)
    for (std::size_t a = 0; a < 3; ++a) rep.per_target[target][a] = detail::mean_or_nan(v[a]);
  for (std::size_t a = 0; a < 3; ++a) rep.axis_r[a] = detail::mean_or_nan(axes[a]);
  rep.overall = (rep.axis_r[0] + rep.axis_r[1] + rep.axis_r[2]) / 3.0;
  return rep;
}

namespace detail {

inline nlohmann::ordered_json num_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json axes_json(const std::array<double, 3>& r) {
  nlohmann::ordered_json j;
  for (std::size_t a = 0; a < 3; ++a) j[kAxisNames[a]] = num_or_null(r[a]);
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["participant_id"] = r.participant_id;
  j["session_index"] = r.session_index;
  j["modality"] = std::string(to_string(r.modality));
  j["strategy"] = r.strategy;
  j["train_sessions"] = r.train_sessions;
  j["window"] = {{"start_s", r.window.start_s},
                 {"duration_s", r.window.duration_s},
                 {"steps", r.window.steps},
                 {"step_s", r.window.step_s}};
  j["axis_r"] = detail::axes_json(r.axis_r);
  j["overall_r"] = detail::num_or_null(r.overall);
  auto pt = nlohmann::ordered_json::object();
  for (const auto& [target, v] : r.per_target) pt[std::to_string(target)] = detail::axes_json(v);
  j["per_target_r"] = std::move(pt);
  if (!r.fold_axis_r.empty()) {
    auto folds = nlohmann::ordered_json::array();
    for (const auto& f : r.fold_axis_r) folds.push_back(detail::axes_json(f));
    j["fold_axis_r"] = std::move(folds);
  }
  j["excluded"] = r.excluded;
  if (!r.model_hash.empty()) j["model_hash"] = r.model_hash;
  auto trials = nlohmann::ordered_json::array();
  for (const auto& t : r.trials) {
    nlohmann::ordered_json tj;
    tj["trial"] = t.trial_index;
    tj["target"] = t.target_id;
    tj["condition"] = std::string(to_string(t.condition));
    if (t.fold >= 0) tj["fold"] = t.fold;
    auto rr = nlohmann::ordered_json::array();
    for (const auto& v : t.r) rr.push_back(v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr));
    tj["r"] = std::move(rr);
    trials.push_back(std::move(tj));
  }
  j["trials"] = std::move(trials);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  auto axes = [&](const nlohmann::json& v) {
    return std::array<double, 3>{num(v.at("x")), num(v.at("y")), num(v.at("z"))};
  };
  EvalReport r;
  try {
    r.participant_id = j.at("participant_id").get<std::string>();
    r.session_index = j.at("session_index").get<int>();
    r.modality = parse_modality(j.at("modality").get<std::string>());
    r.strategy = j.at("strategy").get<std::string>();
    r.train_sessions = j.at("train_sessions").get<std::vector<int>>();
    const auto& w = j.at("window");
    r.window = {w.at("start_s").get<double>(), w.at("duration_s").get<double>(), w.at("steps").get<std::size_t>(),
                w.at("step_s").get<double>()};
    r.axis_r = axes(j.at("axis_r"));
    r.overall = num(j.at("overall_r"));
    for (const auto& [k, v] : j.at("per_target_r").items()) r.per_target[std::stoi(k)] = axes(v);
    if (j.contains("fold_axis_r"))
      for (const auto& f : j.at("fold_axis_r")) r.fold_axis_r.push_back(axes(f));
    r.excluded = j.at("excluded").get<std::size_t>();
    if (j.contains("model_hash")) r.model_hash = j.at("model_hash").get<std::string>();
    for (const auto& t : j.at("trials")) {
      TrialScore s;
      s.trial_index = t.at("trial").get<int>();
      s.target_id = t.at("target").get<int>();
      s.condition = parse_condition(t.at("condition").get<std::string>());
      if (t.contains("fold")) s.fold = t.at("fold").get<int>();
      for (std::size_t a = 0; a < 3; ++a)
        if (!t.at("r")[a].is_null()) s.r[a] = t.at("r")[a].get<double>();
      r.trials.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

/// Flat summary rows: participant,session,modality,strategy,axis,r (axis "mean" is the overall value).
inline std::string report_csv(const std::vector<EvalReport>& reports, bool header = true) {
  std::string out = header ? "participant,session,modality,strategy,axis,r\n" : "";
  auto row = [&](const EvalReport& r, const std::string& axis, double v) {
    nlohmann::json num = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("nan");
    out += r.participant_id + "," + std::to_string(r.session_index) + "," + std::string(to_string(r.modality)) + "," +
           r.strategy + "," + axis + "," + (num.is_string() ? std::string("nan") : num.dump()) + "\n";
  };
  for (const auto& r : reports) {
    for (std::size_t a = 0; a < 3; ++a) row(r, kAxisNames[a], r.axis_r[a]);
    row(r, "mean", r.overall);
  }
  return out;
}

}  // namespace mtd::eval
