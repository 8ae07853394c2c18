#include "qac/reference.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "qac/metrics.hpp"
#include "qac/returns.hpp"
#include "qac/util.hpp"

namespace qac::reference {

namespace {

struct AgentSlot {
  std::unique_ptr<envs::Env> env;
  std::mt19937_64 rng;
  std::uint64_t episode = 0;
  std::vector<double> obs;
  double score = 0.0;
};

}  // namespace

pipeline::RunReport train_sync(const SyncConfig& cfg) {
  nnet::validate(cfg.net);
  nnet::validate(cfg.hyper);
  envs::validate(cfg.env);
  if (cfg.n_agents < 1) throw std::invalid_argument("train_sync: n_agents must be >= 1");
  if (cfg.max_updates < 1) throw std::invalid_argument("train_sync: max_updates must be >= 1");
  if (!(cfg.metrics_interval_s > 0.0))
    throw std::invalid_argument("train_sync: metrics interval must be > 0");
  {
    auto probe = envs::make_env(cfg.env);
    if (probe->observation_dim() != cfg.net.input_dim)
      throw std::invalid_argument("train_sync: net input_dim does not match env observation_dim");
    if (probe->action_count() != cfg.net.n_actions)
      throw std::invalid_argument("train_sync: net n_actions does not match env action_count");
  }

  nnet::ModelState model = nnet::init_model(cfg.net, derive_seed(cfg.seed, {kSeedModelInit}));
  nnet::RmsState rms = nnet::init_rms(cfg.net);
  metrics::MetricsCollector metrics;
  const auto t0 = Clock::now();
  auto next_frame = t0 + std::chrono::duration_cast<Clock::duration>(
                             std::chrono::duration<double>(cfg.metrics_interval_s));
  std::vector<metrics::MetricsFrame> frames;
  std::vector<std::vector<double>> trajectory;

  std::vector<AgentSlot> agents(static_cast<std::size_t>(cfg.n_agents));
  for (int i = 0; i < cfg.n_agents; ++i) {
    auto& a = agents[static_cast<std::size_t>(i)];
    a.env = envs::make_env(cfg.env);
    a.rng.seed(derive_seed(cfg.seed, {kSeedAgentRng, static_cast<std::uint64_t>(i)}));
    a.obs = a.env->reset(
        derive_seed(cfg.seed, {kSeedEnvEpisode, static_cast<std::uint64_t>(i), a.episode}));
  }

  std::int64_t skipped = 0;
  int turn = 0;
  std::vector<const std::vector<double>*> state_view;

  while (metrics.updates_total() < cfg.max_updates) {
    AgentSlot& a = agents[static_cast<std::size_t>(turn)];
    const int agent_id = turn;
    turn = (turn + 1) % cfg.n_agents;

    // play one segment: up to t_max steps, cut early at terminal
    returns::ExperienceBatch batch;
    batch.agent_id = agent_id;
    bool terminal = false;
    double bootstrap = 0.0;
    while (true) {
      std::vector<std::vector<double>> one{a.obs};
      nnet::ForwardResult fr = nnet::forward(model, cfg.net, one);
      metrics.record_prediction_batch(1);
      const int action =
          cfg.greedy ? argmax_index(fr.policies[0]) : sample_index(fr.policies[0], a.rng);
      envs::StepResult sr = a.env->step(action);
      const double reward =
          cfg.hyper.clip_rewards ? std::clamp(sr.reward, -1.0, 1.0) : sr.reward;
      batch.experiences.push_back(
          returns::Experience{std::move(a.obs), action, reward, fr.values[0], model.version});
      metrics.record_produced(1);
      a.score += sr.reward;
      if (sr.terminal) {
        terminal = true;
        metrics.record_episode(a.score);
        a.score = 0.0;
        ++a.episode;
        a.obs = a.env->reset(derive_seed(
            cfg.seed, {kSeedEnvEpisode, static_cast<std::uint64_t>(agent_id), a.episode}));
        break;
      }
      a.obs = std::move(sr.observation);
      if (static_cast<int>(batch.experiences.size()) >= cfg.hyper.t_max) {
        bootstrap = fr.values[0];  // the value just played seeds the tail
        break;
      }
    }

    std::vector<double> rewards;
    rewards.reserve(batch.experiences.size());
    for (const auto& e : batch.experiences) rewards.push_back(e.reward);
    batch.returns = returns::compute_returns(rewards, terminal, bootstrap, cfg.hyper.gamma);
    batch.terminal = terminal;

    nnet::GradientPacket grads = nnet::loss_and_gradients(model, cfg.net, cfg.hyper, batch);
    nnet::UpdateResult res = nnet::rmsprop_update(model, rms, grads, cfg.hyper);
    if (res.applied) {
      model = std::move(res.model);
      rms = std::move(res.rms);
      const std::vector<std::uint64_t> lags(batch.experiences.size(), 0);
      metrics.record_update(static_cast<int>(batch.experiences.size()), lags, 0);
      if (cfg.capture_trajectory) trajectory.push_back(model.theta);
    } else {
      ++skipped;
      metrics.record_skipped_update();
    }

    const auto now = Clock::now();
    if (now >= next_frame) {
      frames.push_back(metrics.snapshot(cfg.n_agents, 0, 0));
      next_frame += std::chrono::duration_cast<Clock::duration>(
          std::chrono::duration<double>(cfg.metrics_interval_s));
    }
  }

  frames.push_back(metrics.snapshot(cfg.n_agents, 0, 0));

  pipeline::RunReport rep;
  rep.total_updates = metrics.updates_total();
  rep.skipped_updates = skipped;
  rep.total_predictions = metrics.predictions_total();
  rep.total_episodes = metrics.episodes_total();
  rep.wall_time_s = seconds_between(t0, Clock::now());
  rep.avg_tps = rep.total_updates / rep.wall_time_s;
  rep.avg_pps = rep.total_predictions / rep.wall_time_s;
  rep.mean_lag = metrics.mean_lag_overall();
  rep.final_knobs.n_agents = cfg.n_agents;
  rep.final_knobs.n_predictors = 0;
  rep.final_knobs.n_trainers = 0;
  rep.final_rolling_score = metrics.rolling_score_mean();
  rep.episode_scores = metrics.episode_scores();
  rep.frames = std::move(frames);
  rep.experiences_produced = metrics.experiences_produced();
  rep.experiences_trained = metrics.experiences_trained();
  rep.experiences_dropped = 0;
  rep.experiences_left_queued = 0;
  rep.theta_trajectory = std::move(trajectory);
  rep.final_model = std::move(model);
  if (!cfg.metrics_out.empty()) {
    metrics::write_frames(cfg.metrics_out, rep.frames);
    rep.metrics_path = cfg.metrics_out;
  }
  return rep;
}

}  // namespace qac::reference
