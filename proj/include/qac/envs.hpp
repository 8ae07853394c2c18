#pragma once

#include <cstdint>
#include <memory>
#include <vector>

namespace qac::envs {

enum class EnvKind { ContextualBandit, Catch, DelayLab };

struct EnvSpec {
  EnvKind kind = EnvKind::ContextualBandit;
  // contextual bandit
  int n_contexts = 4;
  int n_actions = 4;
  // catch grid
  int grid_size = 5;
  // delay lab
  std::int64_t step_delay_us = 500;
  int episode_len = 64;
  // applies to any kind
  int action_repeat = 1;
};

EnvSpec bandit(int n_contexts = 4, int n_actions = 4);
EnvSpec catch_grid(int grid_size = 5);
EnvSpec delay_lab(std::int64_t step_delay_us = 500, int episode_len = 64);

void validate(const EnvSpec& spec);

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool terminal = false;
};

class Env {
 public:
  virtual ~Env() = default;
  // Starts a fresh episode; all in-episode randomness comes from `seed`.
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  // Advances one step. Stepping a finished episode is a logic error.
  virtual StepResult step(int action) = 0;
  virtual int observation_dim() const = 0;
  virtual int action_count() const = 0;
};

std::unique_ptr<Env> make_env(const EnvSpec& spec);

// Best achievable expected episode score, used as a training target.
// Only defined for the two learnable tasks; the delay lab has no reward.
double optimal_expected_return(const EnvSpec& spec);

}  // namespace qac::envs
