#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtd/cli/config.hpp"
#include "mtd/core/session_io.hpp"
#include "mtd/ersp/features.hpp"
#include "mtd/eval/score.hpp"
#include "mtd/eval/stats.hpp"
#include "mtd/eval/strategy.hpp"
#include "mtd/fc/connectivity.hpp"
#include "mtd/nn/io.hpp"
#include "mtd/synth/forward_model.hpp"
#include "mtd/tune/asha.hpp"
#include "mtd/tune/objective.hpp"
#include "mtd/tune/space.hpp"

namespace mtd::cli {

namespace fs = std::filesystem;

inline constexpr int kArtifactFormatVersion = 1;

/// A resolved configuration plus the stream for progress messages.
struct Context {
  Json cfg;
  std::string hash;
  std::ostream* log = &std::cout;

  std::ostream& out() const { return *log; }
  Json stamp() const { return {{"config_hash", hash}}; }
};

inline void write_json(const fs::path& p, const Json& j) { fmt::write_file(p.string(), j.dump(2) + "\n"); }

inline void write_resolved(const Context& ctx, const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "config.json", ctx.cfg);
}

/// CSV preceded by a comment line carrying the format version and config hash.
inline void write_stamped_csv(const Context& ctx, const fs::path& p, const std::string& body) {
  fmt::write_file(p.string(), "# format_version=" + std::to_string(kArtifactFormatVersion) + " config_hash=" +
                                  ctx.hash + "\n" + body);
}

inline std::string participant_name(int p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%02d", p);
  return buf;
}

inline std::string session_name(int s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02d", s);
  return buf;
}

/// Session directories below `root` (root/<participant>/<session>/session.json), sorted by path.
inline std::vector<fs::path> session_dirs(const fs::path& root) {
  require(fs::is_directory(root), ErrorKind::MissingData, "data directory " + root.string() + " not found");
  std::vector<fs::path> out;
  for (const auto& p : fs::directory_iterator(root)) {
    if (!p.is_directory()) continue;
    for (const auto& s : fs::directory_iterator(p.path()))
      if (s.is_directory() && fs::exists(s.path() / "session.json")) out.push_back(s.path());
  }
  std::sort(out.begin(), out.end());
  require(!out.empty(), ErrorKind::MissingData, "no session directories under " + root.string());
  return out;
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const Context& ctx, const fs::path& out) {
  const Json& s = ctx.cfg.at("synth");
  const auto base = forward_model(ctx.cfg);
  auto proto = protocol(ctx.cfg);
  const auto modality = s.at("modality").get<std::string>();
  const int np = s.at("participants").get<int>(), ns = s.at("sessions").get<int>();
  write_resolved(ctx, out);
  for (int p = 1; p <= np; ++p) {
    auto fm = base;
    fm.seed = substream(base.seed, static_cast<std::uint64_t>(p));
    proto.participant_id = participant_name(p);
    for (int k = 1; k <= ns; ++k) {
      const Modality m = modality == "alternate" ? synth::alternating_modality(p, k) : parse_modality(modality);
      const auto session = synth::synth_session(fm, k, m, proto);
      const fs::path dir = out / proto.participant_id / session_name(k);
      fs::create_directories(dir);
      io::write_session(session, dir, ctx.stamp());
      ctx.out() << "wrote " << dir.string() << '\n';
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ersp

inline std::string features_file(const std::string& participant, int session) {
  return participant + "_" + session_name(session) + ".ersp";
}

/// Key under which a feature file is reused: the ERSP settings plus the raw session files.
inline std::string feature_cache_key(const Json& cfg, const fs::path& session_dir) {
  Json settings = cfg.at("ersp");
  std::uint64_t h = fnv1a64(settings.dump());
  for (const char* f : {"session.json", "eeg.f32", "kin.csv", "events.csv"})
    if (fs::exists(session_dir / f)) h = fnv1a64(fmt::read_file((session_dir / f).string()), h);
  return fmt::hex64(h);
}

inline int cmd_ersp(const Context& ctx, const fs::path& data, const fs::path& out) {
  const auto ecfg = ersp_config(ctx.cfg);
  const auto opt = feature_options(ctx.cfg);
  write_resolved(ctx, out);
  for (const auto& dir : session_dirs(data)) {
    const std::string key = feature_cache_key(ctx.cfg, dir);
    const auto session = io::read_session(dir);
    const fs::path path = out / features_file(session.participant_id, session.session_index);
    if (fs::exists(path)) {
      const auto h = ersp::read_features_header(path);
      if (h.value("cache_key", "") == key) {
        ctx.out() << "cached " << path.string() << '\n';
        continue;
      }
    }
    const auto f = ersp::extract_features(session, ecfg, opt);
    Json extra = ctx.stamp();
    extra["cache_key"] = key;
    ersp::write_features(path, f, extra);
    ctx.out() << "wrote " << path.string() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// feature loading shared by train, tune and eval

struct FeatureSet {
  std::vector<ersp::SessionFeatures> sessions;  // sorted by session index

  std::vector<const ersp::SessionFeatures*> ptrs() const {
    std::vector<const ersp::SessionFeatures*> v;
    for (const auto& f : sessions) v.push_back(&f);
    return v;
  }
  std::vector<int> indices() const {
    std::vector<int> v;
    for (const auto& f : sessions) v.push_back(f.session_index);
    return v;
  }
};

/// Feature files in `dir` grouped by participant, each group sorted by session.
inline std::map<std::string, FeatureSet> load_features(const fs::path& dir, const std::string& participant = "") {
  require(fs::is_directory(dir), ErrorKind::MissingData, "feature directory " + dir.string() + " not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ersp") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::map<std::string, FeatureSet> out;
  for (const auto& f : files) {
    const auto h = ersp::read_features_header(f);
    const auto pid = h.at("participant_id").get<std::string>();
    if (!participant.empty() && pid != participant) continue;
    out[pid].sessions.push_back(ersp::read_features(f));
  }
  for (auto& [pid, set] : out)
    std::sort(set.sessions.begin(), set.sessions.end(),
              [](const auto& a, const auto& b) { return a.session_index < b.session_index; });
  require(!out.empty(), ErrorKind::MissingData, "no feature files in " + dir.string());
  return out;
}

inline const FeatureSet& single_participant(const std::map<std::string, FeatureSet>& all) {
  require(all.size() == 1, ErrorKind::ConfigError, "several participants found; choose one with --participant");
  return all.begin()->second;
}

/// Selected sessions of one participant; an empty selection means the first session.
inline std::vector<const ersp::SessionFeatures*> pick_sessions(const FeatureSet& set, std::vector<int> wanted) {
  if (wanted.empty()) wanted = {set.sessions.front().session_index};
  std::vector<const ersp::SessionFeatures*> out;
  for (int s : wanted) {
    auto it = std::find_if(set.sessions.begin(), set.sessions.end(), [&](const auto& f) { return f.session_index == s; });
    require(it != set.sessions.end(), ErrorKind::MissingData, "no features for session " + std::to_string(s));
    out.push_back(&*it);
  }
  return out;
}

inline Json train_report_json(const nn::TrainReport& r) {
  return {{"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss()},
          {"stopped_early", r.stopped_early},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss}};
}

inline nn::InputShape shape_of(const ersp::SessionFeatures& f) {
  return {f.channels.size(), f.freqs_hz.size(), f.width};
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const Context& ctx, const fs::path& features, const fs::path& out, const std::string& participant,
                     const std::vector<int>& sessions) {
  const auto opt = eval_options(ctx.cfg);
  const auto all = load_features(features, participant);
  const auto sets = pick_sessions(single_participant(all), sessions);
  write_resolved(ctx, out);
  const auto d = eval::train_decoder(sets, std::vector<std::vector<std::size_t>>(sets.size()), opt,
                                     substream(seed_of(ctx.cfg), "train"));
  Json rep = ctx.stamp();
  rep["format_version"] = kArtifactFormatVersion;
  std::vector<int> idx;
  for (const auto* f : sets) idx.push_back(f->session_index);
  rep["participant_id"] = sets.front()->participant_id;
  rep["train_sessions"] = idx;
  Json models = Json::array();
  for (std::size_t m = 0; m < d.models.size(); ++m) {
    const std::string name = d.models.size() == 1 ? "model.bin" : std::string("model_") + eval::kAxisNames[m] + ".bin";
    nn::save_model(out / name, *d.models[m], ctx.stamp());
    Json r = train_report_json(d.reports[m]);
    r["file"] = name;
    r["params_hash"] = eval::params_hash(*d.models[m]);
    models.push_back(r);
    ctx.out() << "wrote " << (out / name).string() << '\n';
  }
  rep["models"] = models;
  write_json(out / "train_report.json", rep);
  return 0;
}

// ---------------------------------------------------------------------------
// tune

inline std::vector<tune::AshaEvent> read_event_log(const fs::path& p) {
  std::vector<tune::AshaEvent> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) break;  // a torn final line from an interrupted run
    if (!j.contains("event")) continue;  // header line
    out.push_back(tune::event_from_json(j));
  }
  return out;
}

inline int cmd_tune(const Context& ctx, const fs::path& features, const fs::path& out, const std::string& participant,
                    const std::vector<int>& sessions, bool resume) {
  const auto space = search_space(ctx.cfg);
  auto asha = asha_options(ctx.cfg);
  const auto eopt = eval_options(ctx.cfg);
  const auto n = ctx.cfg.at("tune").at("configs").get<std::size_t>();
  const auto all = load_features(features, participant);
  const auto sets = pick_sessions(single_participant(all), sessions);
  write_resolved(ctx, out);

  const std::uint64_t seed = substream(seed_of(ctx.cfg), "tune");
  const auto configs = tune::sample_configs(space, n, seed);
  std::vector<nn::SessionPair> pairs;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (const auto& p : ersp::training_pairs(*sets[s], {}, eopt.pair_stride)) pairs.push_back({s, p});
  auto src = nn::examples_from(sets, pairs, static_cast<std::size_t>(space.seq_len_steps));
  tune::TrainObjective objective(configs, shape_of(*sets.front()), src, eopt.train, substream(seed, "init"));

  const fs::path log_path = out / "tune_log.ndjson", partial = out / "tune_log.ndjson.partial";
  if (resume) {
    if (fs::exists(partial)) asha.resume_log = read_event_log(partial);
    else if (fs::exists(log_path)) asha.resume_log = read_event_log(log_path);
  }
  std::ofstream stream(partial, std::ios::trunc);
  stream << Json{{"format_version", kArtifactFormatVersion}, {"config_hash", ctx.hash}}.dump() << '\n';
  asha.on_event = [&](const tune::AshaEvent& e) { stream << tune::event_json(e).dump() << '\n' << std::flush; };
  asha.on_retire = [&](std::size_t id) { objective.release(id); };

  const auto res = tune::run_asha(n, [&](std::size_t id, int epochs) { return objective(id, epochs); }, asha);
  stream.close();
  fs::rename(partial, log_path);

  Json ledger = ctx.stamp();
  ledger["format_version"] = kArtifactFormatVersion;
  ledger["rungs"] = asha.rungs;
  ledger["eta"] = asha.eta;
  Json cj = Json::array();
  for (std::size_t i = 0; i < configs.size(); ++i) cj.push_back({{"id", i}, {"hyper", nn::hyper_json(configs[i])}});
  ledger["configs"] = cj;
  Json rungs = Json::array();
  for (std::size_t k = 0; k < res.rungs.size(); ++k) {
    Json rk = Json::array();
    for (const auto& r : res.rungs[k]) rk.push_back({{"config_id", r.config_id}, {"val_loss", r.val_loss}});
    rungs.push_back({{"epochs", asha.rungs[k]}, {"results", rk}, {"promoted", res.promoted[k]}});
  }
  ledger["rung_results"] = rungs;
  ledger["total_epochs"] = res.total_epochs;
  ledger["failed"] = res.failed;
  const auto problem = tune::check_ledger(res.log, asha.rungs, asha.eta);
  ledger["ledger_check"] = problem ? *problem : "ok";
  require(res.best_config.has_value(), ErrorKind::DataError, "every tuning trial failed");
  const std::size_t best = *res.best_config;
  ledger["best"] = {{"config_id", best}, {"val_loss", res.best_loss}, {"rung", res.best_rung},
                    {"hyper", nn::hyper_json(configs[best])}};
  write_json(out / "tune_ledger.json", ledger);

  nn::CnnLstm<float>* model = objective.model(best);
  if (!model) {
    objective(best, asha.rungs[static_cast<std::size_t>(res.best_rung)]);
    model = objective.model(best);
  }
  Json extra = ctx.stamp();
  extra["config_id"] = best;
  nn::save_model(out / "best_model.bin", *model, extra);
  ctx.out() << "best config " << best << " val_loss " << fmt::num(res.best_loss) << " after " << res.total_epochs
            << " epochs\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

inline Json eval_document(const Context& ctx, const std::string& strategy, const std::vector<eval::EvalReport>& reps) {
  Json doc;
  doc["format_version"] = eval::kReportFormatVersion;
  doc["kind"] = "eval-reports";
  doc["config_hash"] = ctx.hash;
  doc["strategy"] = strategy;
  Json arr = Json::array();
  for (const auto& r : reps) arr.push_back(eval::report_json(r));
  doc["reports"] = arr;
  return doc;
}

inline int cmd_eval(const Context& ctx, const fs::path& features, const fs::path& out, const std::string& participant) {
  const auto opt = eval_options(ctx.cfg);
  const Json& e = ctx.cfg.at("eval");
  const auto kind = eval::parse_strategy(e.at("strategy").get<std::string>());
  const auto wanted = e.at("sessions").get<std::vector<int>>();
  const auto all = load_features(features, participant);
  write_resolved(ctx, out);
  std::vector<eval::EvalReport> reports;
  for (const auto& [pid, set] : all) {
    std::vector<int> sessions = wanted.empty() ? set.indices() : wanted;
    auto spec = eval::StrategySpec::standard(kind, sessions);
    spec.folds = e.at("folds").get<int>();
    auto r = eval::run_strategy(spec, set.ptrs(), opt);
    ctx.out() << pid << ' ' << eval::to_string(kind) << " mean r " << fmt::num(eval::mean_overall(r)) << '\n';
    reports.insert(reports.end(), r.begin(), r.end());
  }
  const std::string name(eval::to_string(kind));
  write_json(out / ("eval_" + name + ".json"), eval_document(ctx, name, reports));
  write_stamped_csv(ctx, out / ("eval_" + name + ".csv"), eval::report_csv(reports));
  return 0;
}

// ---------------------------------------------------------------------------
// fc and topo

inline std::vector<fc::EpochPair> load_epochs(const Context& ctx, const fs::path& data) {
  const auto montage = montages::by_name(ctx.cfg.at("fc").at("montage").get<std::string>());
  const auto win = epoch_windows(ctx.cfg);
  std::vector<fc::EpochPair> out;
  for (const auto& dir : session_dirs(data)) out.push_back(fc::epochs_from_session(io::read_session(dir), montage, win));
  return out;
}

/// Trials of several sessions stacked into one set.
inline fc::Epochs stack(const std::vector<const fc::Epochs*>& parts) {
  const auto& f = *parts.front();
  std::size_t trials = 0;
  for (const auto* p : parts) {
    require(p->channels == f.channels && p->samples == f.samples && p->sample_rate_hz == f.sample_rate_hz,
            ErrorKind::ShapeError, "sessions differ in epoch shape");
    trials += p->trials;
  }
  fc::Epochs out(trials, f.channels, f.samples, f.sample_rate_hz);
  std::size_t off = 0;
  for (const auto* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p->data.size();
  }
  return out;
}

inline int cmd_fc(const Context& ctx, const fs::path& data, const fs::path& out) {
  const auto opt = permutation_options(ctx.cfg);
  const auto montage = montages::by_name(ctx.cfg.at("fc").at("montage").get<std::string>());
  const auto eps = load_epochs(ctx, data);
  std::vector<const fc::Epochs*> task, base;
  for (const auto& e : eps) {
    task.push_back(&e.task);
    base.push_back(&e.base);
  }
  const fc::EpochPair pooled{stack(task), stack(base)};
  write_resolved(ctx, out);
  std::vector<fc::ConnectivityResult> results;
  for (const auto& band : fc_bands(ctx.cfg)) {
    results.push_back(fc::permutation_test(pooled, band, opt));
    std::size_t shown = 0;
    for (bool d : results.back().displayed) shown += d;
    ctx.out() << band.name << ": " << shown << " displayed edges\n";
  }
  write_stamped_csv(ctx, out / "connectivity.csv", fc::edge_csv(results, montage));
  return 0;
}

inline int cmd_topo(const Context& ctx, const fs::path& data, const fs::path& out) {
  const auto montage = montages::by_name(ctx.cfg.at("fc").at("montage").get<std::string>());
  const auto eps = load_epochs(ctx, data);
  write_resolved(ctx, out);
  std::vector<fc::TopoResult> results;
  for (const auto& band : fc_bands(ctx.cfg)) results.push_back(fc::band_power_topo(eps, band));
  write_stamped_csv(ctx, out / "topography.csv", fc::topo_csv(results, montage));
  ctx.out() << "wrote " << (out / "topography.csv").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct SummaryRow {
  std::string strategy, axis;
  std::size_t n = 0;
  double screen_mean = 0, screen_sd = 0, vr_mean = 0, vr_sd = 0;
  std::optional<eval::PairedStats> stats;
};

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double m = eval::mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Per strategy and axis: each participant's session-mean r under screen and
/// VR, then a paired comparison VR minus screen across participants.
inline std::vector<SummaryRow> summarize(const std::vector<eval::EvalReport>& reports) {
  // strategy -> participant -> modality -> axis(0..3) -> values
  std::map<std::string, std::map<std::string, std::map<Modality, std::array<std::vector<double>, 4>>>> acc;
  for (const auto& r : reports) {
    auto& slot = acc[r.strategy][r.participant_id][r.modality];
    for (std::size_t a = 0; a < 3; ++a)
      if (std::isfinite(r.axis_r[a])) slot[a].push_back(r.axis_r[a]);
    if (std::isfinite(r.overall)) slot[3].push_back(r.overall);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [strategy, parts] : acc) {
    for (std::size_t a = 0; a < 4; ++a) {
      SummaryRow row;
      row.strategy = strategy;
      row.axis = a < 3 ? eval::kAxisNames[a] : "overall";
      std::vector<double> screen, vr;
      for (const auto& [pid, mods] : parts) {
        auto s = mods.find(Modality::Screen), v = mods.find(Modality::VR);
        if (s == mods.end() || v == mods.end() || s->second[a].empty() || v->second[a].empty()) continue;
        screen.push_back(eval::mean(s->second[a]));
        vr.push_back(eval::mean(v->second[a]));
      }
      row.n = screen.size();
      const double nan = std::numeric_limits<double>::quiet_NaN();
      row.screen_mean = screen.empty() ? nan : eval::mean(screen);
      row.vr_mean = vr.empty() ? nan : eval::mean(vr);
      row.screen_sd = sample_sd(screen);
      row.vr_sd = sample_sd(vr);
      if (row.n >= 2) row.stats = eval::paired_compare(vr, screen);
      rows.push_back(row);
    }
  }
  return rows;
}

inline std::string cell(double v) { return std::isfinite(v) || std::isinf(v) ? fmt::num(v) : "nan"; }

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "strategy,axis,n,screen_mean,screen_sd,vr_mean,vr_sd,delta_r,t,df,p,d\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : rows) {
    const auto& s = r.stats;
    out += r.strategy + "," + r.axis + "," + std::to_string(r.n) + "," + cell(r.screen_mean) + "," + cell(r.screen_sd) +
           "," + cell(r.vr_mean) + "," + cell(r.vr_sd) + "," + cell(s ? s->delta_mean : nan) + "," +
           cell(s ? s->t : nan) + "," + cell(s ? s->df : nan) + "," + cell(s ? s->p : nan) + "," +
           cell(s ? s->cohens_d : nan) + "\n";
  }
  return out;
}

inline int cmd_report(const Context& ctx, const std::vector<fs::path>& inputs, const fs::path& out) {
  require(!inputs.empty(), ErrorKind::ConfigError, "report needs at least one evaluation file");
  std::vector<eval::EvalReport> reports;
  std::set<std::string> hashes;
  std::optional<int> version;
  for (const auto& p : inputs) {
    const auto j = nlohmann::json::parse(fmt::read_file(p.string()), nullptr, false);
    require(!j.is_discarded() && j.is_object() && j.value("kind", "") == "eval-reports", ErrorKind::DataError,
            p.string() + " is not an evaluation report file");
    const int v = j.value("format_version", -1);
    require(!version || *version == v, ErrorKind::DataError, "evaluation files mix format versions");
    require(v == eval::kReportFormatVersion, ErrorKind::DataError,
            p.string() + " has unsupported format_version " + std::to_string(v));
    version = v;
    hashes.insert(j.value("config_hash", ""));
    for (const auto& r : j.at("reports")) reports.push_back(eval::report_from_json(r));
  }
  const auto rows = summarize(reports);
  fs::create_directories(out);
  write_stamped_csv(ctx, out / "summary.csv", summary_csv(rows));
  Json doc = ctx.stamp();
  doc["format_version"] = kArtifactFormatVersion;
  doc["source_config_hashes"] = hashes;
  Json arr = Json::array();
  auto jnum = [](double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); };
  for (const auto& r : rows) {
    Json row = {{"strategy", r.strategy}, {"axis", r.axis}, {"n", r.n},
                {"screen_mean", jnum(r.screen_mean)}, {"screen_sd", jnum(r.screen_sd)},
                {"vr_mean", jnum(r.vr_mean)}, {"vr_sd", jnum(r.vr_sd)}};
    if (r.stats)
      row.update({{"delta_r", jnum(r.stats->delta_mean)}, {"t", jnum(r.stats->t)}, {"df", r.stats->df},
                  {"p", jnum(r.stats->p)}, {"d", jnum(r.stats->cohens_d)}});
    arr.push_back(row);
  }
  doc["rows"] = arr;
  write_json(out / "summary.json", doc);
  ctx.out() << summary_csv(rows);
  return 0;
}

}  // namespace mtd::cli
