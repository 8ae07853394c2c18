#include <doctest.h>

#include <atomic>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "qac/channel.hpp"
#include "qac/cli.hpp"
#include "qac/pipeline.hpp"
#include "qac/reference.hpp"

using namespace qac;
using pipeline::PipelineOptions;
using pipeline::PredictionRequest;
using pipeline::PredictionResponse;

namespace {

PipelineOptions lockstep_options(const envs::EnvSpec& env, std::int64_t updates,
                                 std::uint64_t seed) {
  PipelineOptions opt;
  opt.env = env;
  opt.net = cli::net_for_env(env, {16});
  opt.knobs.n_agents = 1;
  opt.knobs.n_predictors = 1;
  opt.knobs.n_trainers = 1;
  opt.knobs.min_train_batch = 1;
  opt.stop.max_updates = updates;
  opt.seed = seed;
  opt.sync_after_submit = true;
  return opt;
}

std::vector<std::unique_ptr<ResponseSlot<PredictionResponse>>> make_slots(int n) {
  std::vector<std::unique_ptr<ResponseSlot<PredictionResponse>>> slots;
  for (int i = 0; i < n; ++i)
    slots.push_back(std::make_unique<ResponseSlot<PredictionResponse>>());
  return slots;
}

}  // namespace

TEST_CASE("the predictor answers everything queued with one forward pass") {
  const nnet::NetworkSpec spec{4, {8}, 3};
  pipeline::SharedModel model(nnet::init_model(spec, 77), nnet::init_rms(spec));
  auto slots = make_slots(7);
  BoundedChannel<PredictionRequest> q(16);
  metrics::MetricsCollector metrics;
  std::atomic<bool> stop{false};

  std::vector<std::vector<double>> states;
  std::vector<std::uint64_t> tickets;
  for (int i = 0; i < 7; ++i) {
    std::vector<double> s{0.1 * i, -0.2 * i, 0.3, 1.0};
    states.push_back(s);
    const auto t = slots[static_cast<std::size_t>(i)]->issue_ticket();
    tickets.push_back(t);
    REQUIRE(q.push(PredictionRequest{i, t, std::move(s)}));
  }
  q.close();  // queue drained, then the loop exits on the closed channel
  pipeline::predictor_loop(q, slots, model, spec, 32, metrics, stop);

  CHECK(metrics.predictions_total() == 7);
  const auto frame = metrics.snapshot(0, 1, 0, 1.0);
  CHECK(frame.pred_batch_mean == 7.0);  // a single batch served all requests

  const auto snap = model.snapshot();
  const auto want = nnet::forward(*snap, spec, states);
  for (int i = 0; i < 7; ++i) {
    auto resp = slots[static_cast<std::size_t>(i)]->take(tickets[static_cast<std::size_t>(i)], stop);
    REQUIRE(resp.has_value());
    CHECK(resp->policy == want.policies[static_cast<std::size_t>(i)]);
    CHECK(resp->value == want.values[static_cast<std::size_t>(i)]);
    CHECK(resp->model_version == 0);
  }
}

TEST_CASE("prediction batches are capped at pred_batch_max") {
  const nnet::NetworkSpec spec{4, {}, 2};
  pipeline::SharedModel model(nnet::init_model(spec, 3), nnet::init_rms(spec));
  auto slots = make_slots(10);
  BoundedChannel<PredictionRequest> q(16);
  metrics::MetricsCollector metrics;
  std::atomic<bool> stop{false};

  for (int i = 0; i < 10; ++i) {
    const auto t = slots[static_cast<std::size_t>(i)]->issue_ticket();
    REQUIRE(q.push(PredictionRequest{i, t, {1.0, 0.0, 0.0, 0.0}}));
  }
  q.close();
  pipeline::predictor_loop(q, slots, model, spec, 4, metrics, stop);

  CHECK(metrics.predictions_total() == 10);
  const auto frame = metrics.snapshot(0, 1, 0, 1.0);
  CHECK(frame.pred_batch_mean == 10.0 / 3.0);  // batches of 4, 4, 2
}

TEST_CASE("shared model applies updates serially and snapshots stay immutable") {
  const nnet::NetworkSpec spec{2, {}, 2};
  nnet::Hyperparams hp;
  pipeline::SharedModel model(nnet::init_model(spec, 9), nnet::init_rms(spec));
  const auto before = model.snapshot();
  CHECK(before->version == 0);

  nnet::GradientPacket g;
  g.dtheta.assign(nnet::param_count(spec), 0.5);
  g.batch_size = 1;
  const auto applied_on = model.apply(g, hp);
  REQUIRE(applied_on.has_value());
  CHECK(*applied_on == 0);
  CHECK(model.version() == 1);
  CHECK(before->version == 0);  // the old snapshot is untouched
  CHECK(before->theta != model.snapshot()->theta);

  // a rejected gradient leaves the version alone
  g.dtheta[0] = std::nan("");
  CHECK_FALSE(model.apply(g, hp).has_value());
  CHECK(model.version() == 1);
}

TEST_CASE("lockstep pipeline reproduces the serial trainer bit for bit") {
  for (const std::uint64_t seed : {7u, 19u}) {
    auto opt = lockstep_options(envs::catch_grid(4), 120, seed);
    opt.capture_trajectory = true;

    reference::SyncConfig sc;
    sc.env = opt.env;
    sc.net = opt.net;
    sc.hyper = opt.hyper;
    sc.max_updates = 120;
    sc.seed = seed;
    sc.capture_trajectory = true;

    const auto piped = pipeline::run(opt);
    const auto serial = reference::train_sync(sc);

    CHECK(piped.total_updates == 120);
    REQUIRE(piped.theta_trajectory.size() == 120);
    REQUIRE(serial.theta_trajectory.size() == 120);
    for (std::size_t i = 0; i < 120; ++i)
      REQUIRE(piped.theta_trajectory[i] == serial.theta_trajectory[i]);
    CHECK(piped.final_model.theta == serial.final_model.theta);
    CHECK(piped.episode_scores == serial.episode_scores);
    CHECK(piped.mean_lag == 0.0);  // waiting out each update leaves nothing stale
  }
}

TEST_CASE("greedy lockstep runs are reproducible across invocations") {
  auto opt = lockstep_options(envs::catch_grid(4), 40, 33);
  opt.greedy = true;
  const auto a = pipeline::run(opt);
  const auto b = pipeline::run(opt);
  CHECK(a.final_model.theta == b.final_model.theta);
  CHECK(a.total_episodes == b.total_episodes);
  CHECK(a.episode_scores == b.episode_scores);
}

TEST_CASE("every produced experience is accounted for") {
  PipelineOptions opt;
  opt.env = envs::catch_grid(5);
  opt.net = cli::net_for_env(opt.env, {16});
  opt.knobs.n_agents = 3;
  opt.knobs.n_predictors = 2;
  opt.knobs.n_trainers = 2;
  opt.knobs.min_train_batch = 8;
  opt.stop.max_updates = 60;
  opt.seed = 123;
  const auto rep = pipeline::run(opt);

  CHECK(rep.total_updates == 60);
  CHECK(rep.experiences_produced ==
        rep.experiences_trained + rep.experiences_left_queued + rep.experiences_dropped);
  CHECK(rep.experiences_trained >= 60 * 8);  // every update met the batch floor
  CHECK(rep.total_episodes == static_cast<std::int64_t>(rep.episode_scores.size()));
}

TEST_CASE("trainers coalesce submissions up to the batch floor") {
  // bandit episodes are single experiences, so each update must gather
  // exactly min_train_batch of them
  PipelineOptions opt;
  opt.env = envs::bandit();
  opt.net = cli::net_for_env(opt.env, {8});
  opt.knobs.n_agents = 2;
  opt.knobs.n_predictors = 1;
  opt.knobs.n_trainers = 1;
  opt.knobs.min_train_batch = 7;
  opt.stop.max_updates = 25;
  opt.seed = 5;
  const auto rep = pipeline::run(opt);
  CHECK(rep.total_updates == 25);
  CHECK(rep.experiences_trained == 25 * 7);
  CHECK(rep.experiences_produced ==
        rep.experiences_trained + rep.experiences_left_queued + rep.experiences_dropped);
}

TEST_CASE("a free-running pipeline records the staleness it creates") {
  PipelineOptions opt;
  opt.env = envs::catch_grid(5);
  opt.net = cli::net_for_env(opt.env, {16});
  opt.knobs.n_agents = 4;
  opt.knobs.n_predictors = 1;
  opt.knobs.n_trainers = 1;
  opt.knobs.min_train_batch = 1;
  opt.stop.max_updates = 300;
  opt.seed = 99;
  const auto rep = pipeline::run(opt);
  CHECK(rep.total_updates == 300);
  CHECK(rep.mean_lag >= 0.0);
  CHECK(std::isfinite(rep.mean_lag));
  // frames carry the queue depth and knob counts
  REQUIRE(!rep.frames.empty());
  const auto& last = rep.frames.back();
  CHECK(last.n_a == 4);
  CHECK(last.n_p == 1);
  CHECK(last.n_t == 1);
  CHECK(last.updates_total == 300);
}

TEST_CASE("stop conditions: wall clock and target score") {
  PipelineOptions opt;
  opt.env = envs::bandit(2, 2);
  opt.net = cli::net_for_env(opt.env, {8});
  opt.knobs.n_agents = 1;
  opt.knobs.n_predictors = 1;
  opt.knobs.n_trainers = 1;
  opt.stop = {};
  opt.stop.max_seconds = 0.3;
  opt.seed = 3;
  const auto rep = pipeline::run(opt);
  CHECK(rep.wall_time_s >= 0.3);
  CHECK(rep.wall_time_s < 30.0);
  CHECK(rep.total_updates > 0);

  // an easy bandit reaches a perfect rolling score quickly
  PipelineOptions opt2 = opt;
  opt2.stop = {};
  opt2.stop.target_score = 0.9;
  opt2.hyper.eta = 0.01;
  const auto rep2 = pipeline::run(opt2);
  CHECK(rep2.final_rolling_score >= 0.9);
  CHECK(rep2.total_episodes >= 30);  // the score gate needs a full window
}

TEST_CASE("annealing stays within limits and logs every epoch") {
  PipelineOptions opt;
  opt.env = envs::bandit();
  opt.net = cli::net_for_env(opt.env, {8});
  opt.knobs.n_agents = 2;
  opt.knobs.n_predictors = 1;
  opt.knobs.n_trainers = 1;
  opt.anneal = true;
  opt.epoch_s = 0.2;
  opt.limits = {4, 3, 3};
  opt.stop = {};
  opt.stop.max_seconds = 2.0;
  opt.seed = 17;
  const auto rep = pipeline::run(opt);

  CHECK(rep.anneal_history.size() >= 2);  // calibration plus at least one decision
  for (const auto& h : rep.anneal_history) {
    CHECK(h.knobs.n_agents >= 1);
    CHECK(h.knobs.n_agents <= 4);
    CHECK(h.knobs.n_predictors >= 1);
    CHECK(h.knobs.n_predictors <= 3);
    CHECK(h.knobs.n_trainers >= 1);
    CHECK(h.knobs.n_trainers <= 3);
    CHECK(h.measured_tps >= 0.0);
  }
  CHECK(rep.final_knobs.n_agents >= 1);
  CHECK(rep.final_knobs.n_agents <= 4);
  // queue geometry never moves
  CHECK(rep.final_knobs.min_train_batch == opt.knobs.min_train_batch);
  CHECK(rep.final_knobs.pred_batch_max == opt.knobs.pred_batch_max);
}

TEST_CASE("pipeline option validation") {
  auto good = lockstep_options(envs::bandit(), 5, 1);

  SUBCASE("needs at least one stop condition") {
    auto opt = good;
    opt.stop = {};
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
  }
  SUBCASE("lockstep demands the serial-equivalent shape") {
    auto opt = good;
    opt.knobs.n_agents = 2;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
    opt = good;
    opt.knobs.min_train_batch = 2;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
    opt = good;
    opt.anneal = true;
    opt.epoch_s = 0.5;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
  }
  SUBCASE("network shape must match the environment") {
    auto opt = good;
    opt.net.input_dim += 1;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
    opt = good;
    opt.net.n_actions += 1;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
  }
  SUBCASE("knob validation") {
    auto opt = good;
    opt.knobs.n_predictors = 0;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
    opt = good;
    opt.knobs.train_queue_cap = 0;
    CHECK_THROWS_AS(pipeline::run(opt), std::invalid_argument);
  }
}
