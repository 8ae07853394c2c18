#pragma once

#include <stdexcept>

namespace qac::pipeline {

// Worker-pool sizing and queue geometry. Everything the annealer may touch
// lives here; the rest of the run configuration is fixed for a run's life.
struct KnobConfig {
  int n_agents = 1;
  int n_predictors = 2;
  int n_trainers = 2;
  int pred_batch_max = 32;
  int min_train_batch = 1;   // trainer coalesces queued batches up to this many experiences
  int train_queue_cap = 32;
  int pred_queue_cap = 0;    // 0 means one slot per agent

  bool operator==(const KnobConfig&) const = default;
};

inline void validate(const KnobConfig& k) {
  if (k.n_agents < 1) throw std::invalid_argument("KnobConfig: n_agents must be >= 1");
  if (k.n_predictors < 1) throw std::invalid_argument("KnobConfig: n_predictors must be >= 1");
  if (k.n_trainers < 1) throw std::invalid_argument("KnobConfig: n_trainers must be >= 1");
  if (k.pred_batch_max < 1) throw std::invalid_argument("KnobConfig: pred_batch_max must be >= 1");
  if (k.min_train_batch < 1) throw std::invalid_argument("KnobConfig: min_train_batch must be >= 1");
  if (k.train_queue_cap < 1) throw std::invalid_argument("KnobConfig: train_queue_cap must be >= 1");
  if (k.pred_queue_cap < 0) throw std::invalid_argument("KnobConfig: pred_queue_cap must be >= 0");
}

}  // namespace qac::pipeline
