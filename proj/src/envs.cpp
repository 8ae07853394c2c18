#include "qac/envs.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "qac/util.hpp"

namespace qac::envs {

namespace {

int uniform_int(std::mt19937_64& rng, int n) {
  return static_cast<int>(next_uniform(rng) * n);
}

void check_action(int action, int n_actions) {
  if (action < 0 || action >= n_actions) throw std::invalid_argument("env: action out of range");
}

// One-shot episodes: observe a one-hot context, pick an arm, reward 1 if the
// arm designated for that context was picked, else 0.
class BanditEnv final : public Env {
 public:
  explicit BanditEnv(const EnvSpec& spec) : spec_(spec) {}

  std::vector<double> reset(std::uint64_t seed) override {
    rng_.seed(mix64(seed));
    context_ = uniform_int(rng_, spec_.n_contexts);
    done_ = false;
    std::vector<double> obs(static_cast<std::size_t>(spec_.n_contexts), 0.0);
    obs[static_cast<std::size_t>(context_)] = 1.0;
    return obs;
  }

  StepResult step(int action) override {
    if (done_) throw std::logic_error("env: step after terminal");
    check_action(action, spec_.n_actions);
    done_ = true;
    const int target = context_ % spec_.n_actions;
    StepResult r;
    r.observation.assign(static_cast<std::size_t>(spec_.n_contexts), 0.0);
    r.reward = action == target ? 1.0 : 0.0;
    r.terminal = true;
    return r;
  }

  int observation_dim() const override { return spec_.n_contexts; }
  int action_count() const override { return spec_.n_actions; }

 private:
  EnvSpec spec_;
  std::mt19937_64 rng_;
  int context_ = 0;
  bool done_ = true;
};

// A ball falls one row per step down a G x G grid; the paddle on the bottom
// row moves left/stay/right. Catching it on the last row pays +1, missing -1.
// Episodes last exactly G - 1 steps.
class CatchEnv final : public Env {
 public:
  explicit CatchEnv(const EnvSpec& spec) : g_(spec.grid_size) {}

  std::vector<double> reset(std::uint64_t seed) override {
    std::mt19937_64 rng(mix64(seed));
    ball_row_ = 0;
    ball_col_ = uniform_int(rng, g_);
    paddle_col_ = uniform_int(rng, g_);
    done_ = false;
    return observe();
  }

  StepResult step(int action) override {
    if (done_) throw std::logic_error("env: step after terminal");
    check_action(action, 3);
    paddle_col_ = std::clamp(paddle_col_ + (action - 1), 0, g_ - 1);
    ball_row_ += 1;
    StepResult r;
    r.terminal = ball_row_ == g_ - 1;
    r.reward = r.terminal ? (paddle_col_ == ball_col_ ? 1.0 : -1.0) : 0.0;
    done_ = r.terminal;
    r.observation = observe();
    return r;
  }

  int observation_dim() const override { return g_ * g_ + g_; }
  int action_count() const override { return 3; }

 private:
  std::vector<double> observe() const {
    std::vector<double> obs(static_cast<std::size_t>(g_ * g_ + g_), 0.0);
    obs[static_cast<std::size_t>(ball_row_ * g_ + ball_col_)] = 1.0;
    obs[static_cast<std::size_t>(g_ * g_ + paddle_col_)] = 1.0;
    return obs;
  }

  int g_;
  int ball_row_ = 0;
  int ball_col_ = 0;
  int paddle_col_ = 0;
  bool done_ = true;
};

// Pure throughput ballast: every step burns a fixed slice of CPU and pays
// nothing. Lets the scheduling knobs be studied with learning out of the way.
class DelayLabEnv final : public Env {
 public:
  explicit DelayLabEnv(const EnvSpec& spec) : spec_(spec) {}

  std::vector<double> reset(std::uint64_t) override {
    steps_ = 0;
    done_ = false;
    return std::vector<double>(4, 0.0);
  }

  StepResult step(int action) override {
    if (done_) throw std::logic_error("env: step after terminal");
    check_action(action, 2);
    busy_wait_us(spec_.step_delay_us);
    steps_ += 1;
    StepResult r;
    r.observation.assign(4, 0.0);
    r.reward = 0.0;
    r.terminal = steps_ >= spec_.episode_len;
    done_ = r.terminal;
    return r;
  }

  int observation_dim() const override { return 4; }
  int action_count() const override { return 2; }

 private:
  EnvSpec spec_;
  int steps_ = 0;
  bool done_ = true;
};

// Repeats the chosen action k times (or until terminal), summing rewards.
class RepeatWrapper final : public Env {
 public:
  RepeatWrapper(std::unique_ptr<Env> inner, int k) : inner_(std::move(inner)), k_(k) {}

  std::vector<double> reset(std::uint64_t seed) override { return inner_->reset(seed); }

  StepResult step(int action) override {
    StepResult out;
    for (int i = 0; i < k_; ++i) {
      StepResult r = inner_->step(action);
      out.reward += r.reward;
      out.observation = std::move(r.observation);
      out.terminal = r.terminal;
      if (out.terminal) break;
    }
    return out;
  }

  int observation_dim() const override { return inner_->observation_dim(); }
  int action_count() const override { return inner_->action_count(); }

 private:
  std::unique_ptr<Env> inner_;
  int k_;
};

}  // namespace

EnvSpec bandit(int n_contexts, int n_actions) {
  EnvSpec s;
  s.kind = EnvKind::ContextualBandit;
  s.n_contexts = n_contexts;
  s.n_actions = n_actions;
  return s;
}

EnvSpec catch_grid(int grid_size) {
  EnvSpec s;
  s.kind = EnvKind::Catch;
  s.grid_size = grid_size;
  return s;
}

EnvSpec delay_lab(std::int64_t step_delay_us, int episode_len) {
  EnvSpec s;
  s.kind = EnvKind::DelayLab;
  s.step_delay_us = step_delay_us;
  s.episode_len = episode_len;
  return s;
}

void validate(const EnvSpec& spec) {
  if (spec.action_repeat < 1) throw std::invalid_argument("EnvSpec: action_repeat must be >= 1");
  switch (spec.kind) {
    case EnvKind::ContextualBandit:
      if (spec.n_contexts < 1) throw std::invalid_argument("EnvSpec: n_contexts must be >= 1");
      if (spec.n_actions < 2) throw std::invalid_argument("EnvSpec: n_actions must be >= 2");
      break;
    case EnvKind::Catch:
      if (spec.grid_size < 2) throw std::invalid_argument("EnvSpec: grid_size must be >= 2");
      break;
    case EnvKind::DelayLab:
      if (spec.step_delay_us < 0) throw std::invalid_argument("EnvSpec: step_delay_us must be >= 0");
      if (spec.episode_len < 1) throw std::invalid_argument("EnvSpec: episode_len must be >= 1");
      break;
  }
}

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
  validate(spec);
  std::unique_ptr<Env> env;
  switch (spec.kind) {
    case EnvKind::ContextualBandit:
      env = std::make_unique<BanditEnv>(spec);
      break;
    case EnvKind::Catch:
      env = std::make_unique<CatchEnv>(spec);
      break;
    case EnvKind::DelayLab:
      env = std::make_unique<DelayLabEnv>(spec);
      break;
  }
  if (spec.action_repeat > 1) env = std::make_unique<RepeatWrapper>(std::move(env), spec.action_repeat);
  return env;
}

double optimal_expected_return(const EnvSpec& spec) {
  validate(spec);
  switch (spec.kind) {
    case EnvKind::ContextualBandit:
      // the designated arm always pays 1
      return 1.0;
    case EnvKind::Catch:
      // G - 1 steps always suffice to move the paddle under any ball column
      return 1.0;
    case EnvKind::DelayLab:
      throw std::domain_error("optimal_expected_return: undefined for the delay lab");
  }
  throw std::invalid_argument("optimal_expected_return: unknown env kind");
}

}  // namespace qac::envs
