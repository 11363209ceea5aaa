#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mtd/core/error.hpp"

// Asynchronous successive halving.
//
// Every configuration first trains to the rung-0 budget. When a result lands
// at rung k, it is compared with the n results already there (itself included):
//   rank <= floor((n - 1) / eta) and quota left  -> promoted, resumes to rung k + 1
//   rank == 1 but no quota left                  -> waits as the rung leader
//   otherwise                                    -> retired
// A waiting leader is promoted as soon as the quota allows, or retired once
// displaced. When rung k can receive no more results it closes; a leader still
// waiting then takes one of ceil(n / eta) slots, so the best configuration of a
// rung is never retired. Promotions out of rung k never exceed ceil(n / eta).

namespace mtd::tune {

struct AshaEvent {
  std::string event;  // start | complete | fail | promote | retire
  std::size_t config_id = 0;
  int rung = 0;
  int epochs = 0;
  std::optional<double> val_loss;
  double wall_time = 0.0;
};

inline nlohmann::ordered_json event_json(const AshaEvent& e) {
  nlohmann::ordered_json j;
  j["event"] = e.event;
  j["config_id"] = e.config_id;
  j["rung"] = e.rung;
  j["epochs"] = e.epochs;
  j["val_loss"] = e.val_loss ? nlohmann::ordered_json(*e.val_loss) : nlohmann::ordered_json(nullptr);
  j["wall_time"] = e.wall_time;
  return j;
}

inline AshaEvent event_from_json(const nlohmann::json& j) {
  try {
    AshaEvent e;
    e.event = j.at("event").get<std::string>();
    e.config_id = j.at("config_id").get<std::size_t>();
    e.rung = j.at("rung").get<int>();
    e.epochs = j.at("epochs").get<int>();
    if (!j.at("val_loss").is_null()) e.val_loss = j.at("val_loss").get<double>();
    e.wall_time = j.at("wall_time").get<double>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::DataError, std::string("malformed tuning log event: ") + ex.what());
  }
}

/// Validation loss of `config_id` after training it to `epochs` total epochs.
/// Throwing marks the trial failed.
using Objective = std::function<double(std::size_t config_id, int epochs)>;

struct AshaOptions {
  std::vector<int> rungs{3, 6, 12};
  int eta = 2;
  std::size_t workers = 1;
  /// Single-threaded discrete-event execution with simulated clock; job
  /// durations are epochs * cost_per_epoch(config_id) (1 when unset).
  bool simulated = false;
  std::function<double(std::size_t)> cost_per_epoch;
  /// Called once a configuration can no longer be promoted or has failed.
  std::function<void(std::size_t)> on_retire;
  /// Completed results from an earlier log; matching jobs reuse them instead of training.
  std::vector<AshaEvent> resume_log;
  /// Receives every event as it is logged (under the scheduler lock).
  std::function<void(const AshaEvent&)> on_event;

  void validate() const {
    require(!rungs.empty() && rungs.front() >= 1, ErrorKind::ConfigError, "rungs must be positive");
    for (std::size_t i = 1; i < rungs.size(); ++i)
      require(rungs[i] > rungs[i - 1], ErrorKind::ConfigError, "rungs must increase");
    require(eta >= 2, ErrorKind::ConfigError, "eta must be >= 2");
    require(workers >= 1, ErrorKind::ConfigError, "workers must be >= 1");
  }
};

struct RungResult {
  std::size_t config_id = 0;
  double val_loss = 0.0;
};

struct AshaResult {
  std::optional<std::size_t> best_config;
  double best_loss = std::numeric_limits<double>::infinity();
  int best_rung = -1;
  std::vector<std::vector<RungResult>> rungs;        // completion order
  std::vector<std::vector<std::size_t>> promoted;    // promoted[k]: ids promoted out of rung k
  std::vector<AshaEvent> log;
  long total_epochs = 0;
  std::size_t failed = 0;
};

namespace detail {

class AshaScheduler {
 public:
  struct Job {
    std::size_t id;
    int rung;
  };

  AshaScheduler(std::size_t n, const AshaOptions& opt) : opt_(opt), cfg_(n) {
    const auto K = opt.rungs.size();
    res_.rungs.resize(K);
    res_.promoted.resize(K);
    closed_.assign(K, false);
  }

  std::optional<Job> next_job(double now) {
    Job j{};
    if (!queue_.empty()) {
      j = queue_.front();
      queue_.pop_front();
    } else if (next_new_ < cfg_.size()) {
      j = {next_new_++, 0};
    } else {
      return std::nullopt;
    }
    cfg_[j.id].st = St::Running;
    cfg_[j.id].job_rung = j.rung;
    log({"start", j.id, j.rung, opt_.rungs[static_cast<std::size_t>(j.rung)], std::nullopt, now});
    return j;
  }

  int increment(int rung) const {
    return opt_.rungs[static_cast<std::size_t>(rung)] - (rung > 0 ? opt_.rungs[static_cast<std::size_t>(rung - 1)] : 0);
  }

  void complete(const Job& j, std::optional<double> loss, double now) {
    Cfg& c = cfg_[j.id];
    const int epochs = opt_.rungs[static_cast<std::size_t>(j.rung)];
    res_.total_epochs += increment(j.rung);
    if (!loss) {
      c.st = St::Failed;
      ++res_.failed;
      log({"fail", j.id, j.rung, epochs, std::nullopt, now});
      if (opt_.on_retire) opt_.on_retire(j.id);
    } else {
      c.loss = *loss;
      c.rung = j.rung;
      res_.rungs[static_cast<std::size_t>(j.rung)].push_back({j.id, *loss});
      log({"complete", j.id, j.rung, epochs, loss, now});
      c.st = j.rung + 1 == static_cast<int>(opt_.rungs.size()) ? St::Finished : St::Waiting;
    }
    refresh(now);
  }

  AshaResult finish() {
    for (int k = static_cast<int>(res_.rungs.size()) - 1; k >= 0 && !res_.best_config; --k)
      for (const auto& r : res_.rungs[static_cast<std::size_t>(k)])
        if (r.val_loss < res_.best_loss || (r.val_loss == res_.best_loss && r.config_id < *res_.best_config)) {
          res_.best_loss = r.val_loss;
          res_.best_config = r.config_id;
          res_.best_rung = k;
        }
    return std::move(res_);
  }

 private:
  enum class St { Unstarted, Running, Waiting, Queued, Retired, Failed, Finished };
  struct Cfg {
    St st = St::Unstarted;
    int rung = -1;      // last completed rung
    int job_rung = -1;  // rung of the running or queued job
    double loss = 0.0;
  };

  void log(AshaEvent e) {
    if (opt_.on_event) opt_.on_event(e);
    res_.log.push_back(std::move(e));
  }

  bool can_close(std::size_t k) const {
    if (next_new_ < cfg_.size()) return false;
    for (std::size_t k2 = 0; k2 < k; ++k2)
      if (!closed_[k2]) return false;
    for (const auto& c : cfg_) {
      if ((c.st == St::Running || c.st == St::Queued) && c.job_rung <= static_cast<int>(k)) return false;
      if (c.st == St::Waiting && c.rung < static_cast<int>(k)) return false;
    }
    return true;
  }

  void refresh(double now) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t k = 0; k + 1 < opt_.rungs.size(); ++k) {
        if (!closed_[k] && can_close(k)) {
          closed_[k] = true;
          changed = true;
        }
        changed = decide(k, now) || changed;
      }
    }
  }

  bool decide(std::size_t k, double now) {
    std::vector<std::size_t> waiting;
    for (std::size_t i = 0; i < cfg_.size(); ++i)
      if (cfg_[i].st == St::Waiting && cfg_[i].rung == static_cast<int>(k)) waiting.push_back(i);
    if (waiting.empty()) return false;
    auto before = [&](std::size_t a, std::size_t b) {
      return cfg_[a].loss < cfg_[b].loss || (cfg_[a].loss == cfg_[b].loss && a < b);
    };
    std::sort(waiting.begin(), waiting.end(), before);
    const auto& results = res_.rungs[k];
    const std::size_t n = results.size();
    const auto eta = static_cast<std::size_t>(opt_.eta);
    const std::size_t quota = (n - 1) / eta;
    const std::size_t cap = (n + eta - 1) / eta;
    bool changed = false;
    for (auto id : waiting) {
      std::size_t rank = 1;
      for (const auto& r : results)
        if (r.config_id != id && (r.val_loss < cfg_[id].loss || (r.val_loss == cfg_[id].loss && r.config_id < id)))
          ++rank;
      auto& promoted = res_.promoted[k];
      const bool eligible = rank <= quota && promoted.size() < quota;
      const bool leader_at_close = closed_[k] && rank == 1 && promoted.size() < cap;
      if (eligible || leader_at_close) {
        cfg_[id].st = St::Queued;
        cfg_[id].job_rung = static_cast<int>(k) + 1;
        promoted.push_back(id);
        queue_.push_back({id, static_cast<int>(k) + 1});
        log({"promote", id, static_cast<int>(k) + 1, opt_.rungs[k + 1], cfg_[id].loss, now});
        changed = true;
      } else if (closed_[k] || rank > 1) {
        cfg_[id].st = St::Retired;
        log({"retire", id, static_cast<int>(k), opt_.rungs[k], cfg_[id].loss, now});
        if (opt_.on_retire) opt_.on_retire(id);
        changed = true;
      }
    }
    return changed;
  }

  const AshaOptions& opt_;
  std::vector<Cfg> cfg_;
  std::deque<Job> queue_;
  std::size_t next_new_ = 0;
  std::vector<bool> closed_;
  AshaResult res_;
};

}  // namespace detail

inline AshaResult run_asha(std::size_t n_configs, const Objective& objective, const AshaOptions& opt) {
  opt.validate();
  require(n_configs >= 1, ErrorKind::ConfigError, "need at least one configuration");
  detail::AshaScheduler sched(n_configs, opt);

  std::map<std::pair<std::size_t, int>, std::optional<double>> cached;
  for (const auto& e : opt.resume_log) {
    if (e.event == "complete" && e.val_loss) cached[{e.config_id, e.rung}] = e.val_loss;
    if (e.event == "fail") cached[{e.config_id, e.rung}] = std::nullopt;
  }
  auto evaluate = [&](const detail::AshaScheduler::Job& j) -> std::optional<double> {
    if (auto it = cached.find({j.id, j.rung}); it != cached.end()) return it->second;
    try {
      return objective(j.id, opt.rungs[static_cast<std::size_t>(j.rung)]);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  };

  if (opt.simulated) {
    struct Running {
      double finish;
      std::size_t seq;
      detail::AshaScheduler::Job job;
      bool operator>(const Running& o) const { return finish > o.finish || (finish == o.finish && seq > o.seq); }
    };
    std::priority_queue<Running, std::vector<Running>, std::greater<>> heap;
    double now = 0.0;
    std::size_t seq = 0;
    for (;;) {
      while (heap.size() < opt.workers) {
        auto j = sched.next_job(now);
        if (!j) break;
        const double cost = opt.cost_per_epoch ? opt.cost_per_epoch(j->id) : 1.0;
        heap.push({now + cost * sched.increment(j->rung), seq++, *j});
      }
      if (heap.empty()) break;
      const Running r = heap.top();
      heap.pop();
      now = r.finish;
      sched.complete(r.job, evaluate(r.job), now);
    }
    return sched.finish();
  }

  std::mutex mu;
  std::condition_variable cv;
  std::size_t running = 0;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  auto worker = [&] {
    std::unique_lock lk(mu);
    for (;;) {
      auto j = sched.next_job(elapsed());
      if (j) {
        ++running;
        lk.unlock();
        const auto loss = evaluate(*j);
        lk.lock();
        sched.complete(*j, loss, elapsed());
        --running;
        cv.notify_all();
      } else if (running == 0) {
        cv.notify_all();
        return;
      } else {
        cv.wait(lk);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < opt.workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return sched.finish();
}

/// Checks the ledger invariants from the event log alone: a configuration
/// starts rung k > 0 only after promotion into it, and promotions into rung
/// k + 1 never exceed ceil(completed at k / eta). Returns the first violation.
inline std::optional<std::string> check_ledger(const std::vector<AshaEvent>& log, const std::vector<int>& rungs,
                                               int eta) {
  const std::size_t K = rungs.size();
  std::vector<std::size_t> completed(K, 0), promotions(K, 0);
  std::map<std::size_t, int> promoted_to, done_rung;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& e = log[i];
    const std::string where = " (event " + std::to_string(i) + ")";
    if (e.rung < 0 || static_cast<std::size_t>(e.rung) >= K) return "rung out of range" + where;
    const auto k = static_cast<std::size_t>(e.rung);
    if (e.event == "start") {
      if (k > 0 && promoted_to[e.config_id] != e.rung) return "config started a rung it was not promoted to" + where;
    } else if (e.event == "complete") {
      ++completed[k];
      done_rung[e.config_id] = e.rung;
    } else if (e.event == "promote") {
      if (k == 0) return "promotion into rung 0" + where;
      auto it = done_rung.find(e.config_id);
      if (it == done_rung.end() || it->second != e.rung - 1) return "promotion without completing the rung below" + where;
      ++promotions[k - 1];
      const std::size_t cap = (completed[k - 1] + static_cast<std::size_t>(eta) - 1) / static_cast<std::size_t>(eta);
      if (promotions[k - 1] > cap) return "promotions exceed ceil(completed / eta)" + where;
      promoted_to[e.config_id] = e.rung;
    }
  }
  return std::nullopt;
}

}  // namespace mtd::tune
