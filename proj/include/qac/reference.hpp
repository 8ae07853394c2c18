#pragma once

#include <cstdint>
#include <string>

#include "qac/envs.hpp"
#include "qac/nnet.hpp"
#include "qac/pipeline.hpp"

namespace qac::reference {

// Single-threaded trainer with zero policy lag: every action is chosen by
// the current model and every batch trains the exact model that played it.
// Seed derivation, segment cuts and update math match the concurrent
// pipeline operation for operation, so a lockstep pipeline run reproduces
// this trainer's parameter trajectory bit for bit.
struct SyncConfig {
  nnet::NetworkSpec net;
  nnet::Hyperparams hyper;
  envs::EnvSpec env;
  int n_agents = 1;  // environments stepped round-robin, one segment each
  std::int64_t max_updates = 0;
  std::uint64_t seed = 1;
  bool greedy = false;
  bool capture_trajectory = false;
  double metrics_interval_s = 1.0;
  std::string metrics_out;  // empty keeps frames in memory only
};

pipeline::RunReport train_sync(const SyncConfig& cfg);

}  // namespace qac::reference
