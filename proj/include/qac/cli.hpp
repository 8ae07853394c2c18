#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "qac/annealer.hpp"
#include "qac/envs.hpp"
#include "qac/knobs.hpp"
#include "qac/nnet.hpp"
#include "qac/pipeline.hpp"

namespace qac::cli {

enum class Command { Train, TrainSync, Bench, Sweep, LagStudy };

// Everything a command needs, resolved from flags and defaults.
struct RunConfig {
  Command command = Command::Train;
  envs::EnvSpec env;
  std::vector<int> hidden_dims{32};
  nnet::Hyperparams hyper;
  pipeline::KnobConfig knobs;
  pipeline::StopCondition stop;
  bool anneal = false;
  double epoch_s = 60.0;
  annealer::Limits limits;
  double metrics_interval_s = 1.0;
  std::string metrics_out = "metrics.csv";
  std::uint64_t seed = 1;
  bool greedy = false;
  // sweep grids; singleton lists mean the flag was given once
  std::vector<int> agents_list;
  std::vector<int> predictors_list;
  std::vector<int> trainers_list;
  // lag study sweep over trainer coalescing size
  std::vector<int> min_batch_list{1, 5, 10, 20, 40, 80};
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg, int code = 2)
      : std::runtime_error(msg), exit_code(code) {}
  int exit_code;
};

// Parses argv (program name excluded). Throws UsageError on bad input; a
// help request throws with exit_code 0 and the help text as the message.
RunConfig parse_args(const std::vector<std::string>& args);

// Builds the network shape for an environment: probe its dimensions, attach
// the configured hidden stack.
nnet::NetworkSpec net_for_env(const envs::EnvSpec& env, const std::vector<int>& hidden_dims);

int run_main(const RunConfig& cfg);

int main_entry(int argc, char** argv);

}  // namespace qac::cli
