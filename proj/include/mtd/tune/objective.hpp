#pragma once

#include <map>
#include <memory>
#include <mutex>

#include "mtd/core/rng.hpp"
#include "mtd/nn/train.hpp"
#include "mtd/tune/asha.hpp"

namespace mtd::tune {

/// Trains configurations for the scheduler. Each configuration keeps its model
/// and optimizer state between rungs, so a promotion continues from the
/// checkpoint rather than retraining. Retired configurations are released.
class TrainObjective {
 public:
  TrainObjective(std::vector<nn::HyperParams> configs, nn::InputShape shape, nn::ExampleSource data,
                 nn::TrainOptions base, std::uint64_t seed)
      : configs_(std::move(configs)), shape_(shape), data_(std::move(data)), base_(base), seed_(seed) {}

  double operator()(std::size_t id, int epochs) {
    Slot* slot = nullptr;
    {
      std::lock_guard lk(mu_);
      auto& s = slots_[id];
      if (!s) {
        s = std::make_unique<Slot>();
        const std::uint64_t cs = substream(seed_, static_cast<std::uint64_t>(id));
        s->model = std::make_unique<nn::CnnLstm<float>>(configs_.at(id), shape_, substream(cs, "init"));
        nn::TrainOptions o = base_;
        o.seed = substream(cs, "train");
        s->trainer = std::make_unique<nn::Trainer>(*s->model, data_, o);
      }
      slot = s.get();
    }
    return slot->trainer->run(epochs).best_val_loss();
  }

  void release(std::size_t id) {
    std::lock_guard lk(mu_);
    slots_.erase(id);
  }

  /// Model of a configuration still held (not yet retired), with best weights restored.
  nn::CnnLstm<float>* model(std::size_t id) {
    std::lock_guard lk(mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) return nullptr;
    it->second->trainer->restore_best();
    return it->second->model.get();
  }

  std::size_t live() const {
    std::lock_guard lk(mu_);
    return slots_.size();
  }

 private:
  struct Slot {
    std::unique_ptr<nn::CnnLstm<float>> model;
    std::unique_ptr<nn::Trainer> trainer;
  };

  std::vector<nn::HyperParams> configs_;
  nn::InputShape shape_;
  nn::ExampleSource data_;
  nn::TrainOptions base_;
  std::uint64_t seed_;
  mutable std::mutex mu_;
  std::map<std::size_t, std::unique_ptr<Slot>> slots_;
};

}  // namespace mtd::tune
