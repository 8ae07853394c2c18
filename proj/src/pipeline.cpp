#include "qac/pipeline.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <limits>
#include <stdexcept>
#include <thread>

#include "qac/util.hpp"

namespace qac::pipeline {

namespace {
constexpr std::uint64_t kSeedAnneal = 0x616e6e65616cULL;
}

SharedModel::SharedModel(nnet::ModelState init, nnet::RmsState rms)
    : model_(std::make_shared<const nnet::ModelState>(std::move(init))),
      rms_(std::make_shared<const nnet::RmsState>(std::move(rms))) {}

std::shared_ptr<const nnet::ModelState> SharedModel::snapshot() const {
  std::lock_guard lk(read_m_);
  return model_;
}

std::shared_ptr<const nnet::RmsState> SharedModel::rms_snapshot() const {
  std::lock_guard lk(read_m_);
  return rms_;
}

std::uint64_t SharedModel::version() const {
  std::lock_guard lk(read_m_);
  return model_->version;
}

std::optional<std::uint64_t> SharedModel::apply(
    const nnet::GradientPacket& grads, const nnet::Hyperparams& hp,
    const std::function<void(const nnet::ModelState&)>& on_applied) {
  std::lock_guard update_lk(update_m_);
  std::shared_ptr<const nnet::ModelState> cur;
  std::shared_ptr<const nnet::RmsState> cur_rms;
  {
    std::lock_guard lk(read_m_);
    cur = model_;
    cur_rms = rms_;
  }
  nnet::UpdateResult res = nnet::rmsprop_update(*cur, *cur_rms, grads, hp);
  if (!res.applied) return std::nullopt;
  const std::uint64_t applied_on = cur->version;
  auto next = std::make_shared<const nnet::ModelState>(std::move(res.model));
  auto next_rms = std::make_shared<const nnet::RmsState>(std::move(res.rms));
  {
    std::lock_guard lk(read_m_);
    model_ = std::move(next);
    rms_ = std::move(next_rms);
  }
  if (on_applied) {
    std::lock_guard lk(read_m_);
    on_applied(*model_);
  }
  return applied_on;
}

void predictor_loop(BoundedChannel<PredictionRequest>& requests,
                    std::span<const std::unique_ptr<ResponseSlot<PredictionResponse>>> slots,
                    SharedModel& model, const nnet::NetworkSpec& spec, int pred_batch_max,
                    metrics::MetricsCollector& metrics, const std::atomic<bool>& stop) {
  std::vector<PredictionRequest> got;
  std::vector<std::vector<double>> states;
  while (!stop.load(std::memory_order_relaxed)) {
    auto first = requests.pop(&stop);
    if (!first) break;
    got.clear();
    got.push_back(std::move(*first));
    while (static_cast<int>(got.size()) < pred_batch_max) {
      auto more = requests.try_pop();
      if (!more) break;
      got.push_back(std::move(*more));
    }
    states.clear();
    for (auto& r : got) states.push_back(std::move(r.state));

    const auto snap = model.snapshot();
    nnet::ForwardResult fr = nnet::forward(*snap, spec, states);
    for (std::size_t i = 0; i < got.size(); ++i) {
      slots[static_cast<std::size_t>(got[i].agent_id)]->put(
          got[i].ticket,
          PredictionResponse{std::move(fr.policies[i]), fr.values[i], snap->version});
    }
    metrics.record_prediction_batch(static_cast<int>(got.size()));
  }
}

namespace {

struct Worker {
  std::unique_ptr<std::atomic<bool>> stop;
  std::thread thread;
};

class Engine {
 public:
  explicit Engine(const PipelineOptions& opt)
      : opt_(opt),
        slot_cap_(static_cast<std::size_t>(opt.anneal
                                               ? std::max(opt.limits.max_agents, opt.knobs.n_agents)
                                               : opt.knobs.n_agents)),
        shared_(nnet::init_model(opt.net, derive_seed(opt.seed, {kSeedModelInit})),
                nnet::init_rms(opt.net)),
        pred_q_(opt.knobs.pred_queue_cap > 0 ? static_cast<std::size_t>(opt.knobs.pred_queue_cap)
                                             : slot_cap_),
        train_q_(static_cast<std::size_t>(opt.knobs.train_queue_cap)),
        update_budget_(opt.stop.max_updates ? *opt.stop.max_updates
                                            : std::numeric_limits<std::int64_t>::max()) {
    slots_.reserve(slot_cap_);
    for (std::size_t i = 0; i < slot_cap_; ++i)
      slots_.push_back(std::make_unique<ResponseSlot<PredictionResponse>>());
    if (opt_.capture_trajectory) {
      traj_sink_ = [this](const nnet::ModelState& m) {
        std::lock_guard lk(traj_m_);
        trajectory_.push_back(m.theta);
      };
    }
  }

  RunReport run_all() {
    t0_ = Clock::now();
    {
      std::lock_guard lk(workers_m_);
      for (int i = 0; i < opt_.knobs.n_agents; ++i) add_agent_locked();
      for (int i = 0; i < opt_.knobs.n_predictors; ++i) add_predictor_locked();
      for (int i = 0; i < opt_.knobs.n_trainers; ++i) add_trainer_locked();
    }
    try {
      control_loop();
    } catch (...) {
      report_error(std::current_exception());
    }
    shutdown();
    if (first_error_) std::rethrow_exception(first_error_);
    return make_report();
  }

  ~Engine() {
    request_stop();
    join_all();
  }

 private:
  // ---- agents ----

  void agent_main(int id, std::atomic<bool>& stop) {
    try {
      auto env = envs::make_env(opt_.env);
      std::mt19937_64 rng(
          derive_seed(opt_.seed, {kSeedAgentRng, static_cast<std::uint64_t>(id)}));
      std::uint64_t episode = 0;
      std::vector<double> obs = env->reset(
          derive_seed(opt_.seed, {kSeedEnvEpisode, static_cast<std::uint64_t>(id), episode}));
      returns::ExperienceBatch batch;
      batch.agent_id = id;
      double score = 0.0;
      std::int64_t submitted = 0;

      while (!stop.load(std::memory_order_relaxed)) {
        auto& slot = *slots_[static_cast<std::size_t>(id)];
        const std::uint64_t ticket = slot.issue_ticket();
        if (!pred_q_.push(PredictionRequest{id, ticket, obs}, &stop)) break;
        auto resp = slot.take(ticket, stop);
        if (!resp) break;
        const int action = opt_.greedy ? argmax_index(resp->policy)
                                       : sample_index(resp->policy, rng);
        envs::StepResult sr = env->step(action);
        const double reward =
            opt_.hyper.clip_rewards ? std::clamp(sr.reward, -1.0, 1.0) : sr.reward;
        batch.experiences.push_back(returns::Experience{
            std::move(obs), action, reward, resp->value, resp->model_version});
        metrics_.record_produced(1);
        score += sr.reward;

        bool ok = true;
        if (sr.terminal) {
          // terminal cut: nothing to bootstrap
          ok = flush(batch, true, 0.0, stop, submitted);
          metrics_.record_episode(score);
          score = 0.0;
          ++episode;
          obs = env->reset(
              derive_seed(opt_.seed, {kSeedEnvEpisode, static_cast<std::uint64_t>(id), episode}));
        } else {
          obs = std::move(sr.observation);
          if (static_cast<int>(batch.experiences.size()) >= opt_.hyper.t_max) {
            // segment cut: the value from the response just used seeds the tail
            ok = flush(batch, false, resp->value, stop, submitted);
          }
        }
        if (!ok) break;
      }
      if (!batch.experiences.empty())
        metrics_.record_dropped(static_cast<std::int64_t>(batch.experiences.size()));
    } catch (...) {
      report_error(std::current_exception());
    }
  }

  bool flush(returns::ExperienceBatch& batch, bool terminal, double bootstrap,
             std::atomic<bool>& stop, std::int64_t& submitted) {
    std::vector<double> rewards;
    rewards.reserve(batch.experiences.size());
    for (const auto& e : batch.experiences) rewards.push_back(e.reward);
    batch.returns = returns::compute_returns(rewards, terminal, bootstrap, opt_.hyper.gamma);
    batch.terminal = terminal;

    returns::ExperienceBatch out;
    out.agent_id = batch.agent_id;
    std::swap(out, batch);
    batch.agent_id = out.agent_id;
    batch.experiences.clear();
    batch.returns.clear();

    const auto n = static_cast<std::int64_t>(out.experiences.size());
    if (!train_q_.push(std::move(out), &stop)) {
      metrics_.record_dropped(n);
      return false;
    }
    if (opt_.sync_after_submit) {
      ++submitted;
      std::unique_lock lk(gate_m_);
      gate_cv_.wait(lk, [&] {
        return gate_updates_.load(std::memory_order_relaxed) >= submitted ||
               stop.load(std::memory_order_relaxed);
      });
      if (gate_updates_.load(std::memory_order_relaxed) < submitted) return false;
    }
    return true;
  }

  // ---- trainers ----

  void trainer_main(std::atomic<bool>& stop) {
    try {
      while (!stop.load(std::memory_order_relaxed)) {
        auto first = train_q_.pop(&stop);
        if (!first) break;
        std::vector<returns::ExperienceBatch> group;
        std::int64_t total = static_cast<std::int64_t>(first->experiences.size());
        group.push_back(std::move(*first));
        bool bail = false;
        while (total < opt_.knobs.min_train_batch) {
          auto more = train_q_.pop(&stop);
          if (!more) {
            bail = true;
            break;
          }
          total += static_cast<std::int64_t>(more->experiences.size());
          group.push_back(std::move(*more));
        }
        if (bail) {
          // shutting down mid-coalesce: the partial group trains nowhere
          metrics_.record_dropped(total);
          break;
        }

        returns::ExperienceBatch merged;
        merged.agent_id = group.front().agent_id;
        merged.terminal = group.back().terminal;
        merged.experiences.reserve(static_cast<std::size_t>(total));
        merged.returns.reserve(static_cast<std::size_t>(total));
        for (auto& b : group) {
          for (auto& e : b.experiences) merged.experiences.push_back(std::move(e));
          merged.returns.insert(merged.returns.end(), b.returns.begin(), b.returns.end());
        }

        // claim one update slot up front so the cap is exact even when several
        // trainers race toward it
        if (update_budget_.fetch_sub(1, std::memory_order_acq_rel) <= 0) {
          update_budget_.fetch_add(1, std::memory_order_relaxed);
          metrics_.record_dropped(total);
          request_stop();
          break;
        }

        const std::size_t backlog = train_q_.size();
        const auto snap = shared_.snapshot();
        nnet::GradientPacket grads = nnet::loss_and_gradients(*snap, opt_.net, opt_.hyper, merged);
        const auto applied_on = shared_.apply(grads, opt_.hyper, traj_sink_);
        if (applied_on) {
          std::vector<std::uint64_t> lags;
          lags.reserve(merged.experiences.size());
          for (const auto& e : merged.experiences) lags.push_back(*applied_on - e.produced_version);
          // open the gate before the update becomes countable, so a stop
          // triggered by this very update can't strand a gated agent
          bump_gate();
          metrics_.record_update(static_cast<int>(total), lags, backlog);
          if (opt_.stop.max_updates && metrics_.updates_total() >= *opt_.stop.max_updates)
            request_stop();
        } else {
          update_budget_.fetch_add(1, std::memory_order_relaxed);  // nothing applied
          metrics_.record_skipped_update();
        }
      }
    } catch (...) {
      report_error(std::current_exception());
    }
  }

  void bump_gate() {
    gate_updates_.fetch_add(1, std::memory_order_relaxed);
    if (opt_.sync_after_submit) {
      std::lock_guard lk(gate_m_);
      gate_cv_.notify_all();
    }
  }

  // ---- worker management (control thread only, except request_stop) ----

  void add_agent_locked() {
    if (stop_requested_.load()) return;
    const int id = next_agent_id_++;
    if (static_cast<std::size_t>(id) >= slot_cap_)
      throw std::logic_error("pipeline: agent id exceeds slot capacity");
    auto& w = agents_.emplace_back();
    w.stop = std::make_unique<std::atomic<bool>>(false);
    w.thread = std::thread([this, id, s = w.stop.get()] { agent_main(id, *s); });
    n_a_.fetch_add(1);
  }

  void add_predictor_locked() {
    if (stop_requested_.load()) return;
    auto& w = predictors_.emplace_back();
    w.stop = std::make_unique<std::atomic<bool>>(false);
    w.thread = std::thread([this, s = w.stop.get()] {
      try {
        predictor_loop(pred_q_, slots_, shared_, opt_.net, opt_.knobs.pred_batch_max, metrics_, *s);
      } catch (...) {
        report_error(std::current_exception());
      }
    });
    n_p_.fetch_add(1);
  }

  void add_trainer_locked() {
    if (stop_requested_.load()) return;
    auto& w = trainers_.emplace_back();
    w.stop = std::make_unique<std::atomic<bool>>(false);
    w.thread = std::thread([this, s = w.stop.get()] { trainer_main(*s); });
    n_t_.fetch_add(1);
  }

  // Removes the most recently added worker of a pool. The join happens
  // outside the membership lock so trainers can still request_stop().
  void remove_last(std::deque<Worker>& pool, std::atomic<std::int64_t>& counter) {
    std::thread to_join;
    {
      std::lock_guard lk(workers_m_);
      if (pool.empty()) return;
      Worker& w = pool.back();
      w.stop->store(true);
      wake_everything();
      to_join = std::move(w.thread);
    }
    to_join.join();
    {
      std::lock_guard lk(workers_m_);
      pool.pop_back();
      if (&pool == &agents_) --next_agent_id_;  // ids are reused only LIFO
    }
    counter.fetch_sub(1);
  }

  void wake_everything() {
    pred_q_.wake_all();
    train_q_.wake_all();
    for (auto& s : slots_) s->wake();
    gate_cv_.notify_all();
  }

  void request_stop() {
    std::lock_guard lk(workers_m_);
    stop_requested_.store(true);
    for (auto* pool : {&agents_, &predictors_, &trainers_})
      for (auto& w : *pool) w.stop->store(true);
    wake_everything();
  }

  void report_error(std::exception_ptr e) {
    {
      std::lock_guard lk(err_m_);
      if (!first_error_) first_error_ = e;
    }
    request_stop();
  }

  // ---- control ----

  void apply_knobs(const KnobConfig& target) {
    while (n_a_.load() > target.n_agents && !stop_requested_.load()) remove_last(agents_, n_a_);
    while (n_p_.load() > target.n_predictors && !stop_requested_.load())
      remove_last(predictors_, n_p_);
    while (n_t_.load() > target.n_trainers && !stop_requested_.load())
      remove_last(trainers_, n_t_);
    std::lock_guard lk(workers_m_);
    while (n_a_.load() < target.n_agents && !stop_requested_.load()) add_agent_locked();
    while (n_p_.load() < target.n_predictors && !stop_requested_.load()) add_predictor_locked();
    while (n_t_.load() < target.n_trainers && !stop_requested_.load()) add_trainer_locked();
  }

  void control_loop() {
    using namespace std::chrono_literals;
    const double interval = opt_.metrics_interval_s;
    auto next_frame = t0_ + std::chrono::duration_cast<Clock::duration>(
                                std::chrono::duration<double>(interval));

    // annealing state machine: measure the second half of each epoch, then
    // decide and reconfigure at the boundary
    std::optional<annealer::AnnealState> ann;
    std::optional<KnobConfig> candidate;
    Clock::time_point epoch_start = t0_;
    std::int64_t half_updates = -1;  // -1: first half of the epoch still running
    Clock::time_point half_time;
    if (opt_.anneal)
      ann = annealer::make_state(opt_.knobs, opt_.epoch_s, derive_seed(opt_.seed, {kSeedAnneal}),
                                 opt_.limits);

    while (!stop_requested_.load()) {
      std::this_thread::sleep_for(2ms);
      {
        std::lock_guard lk(err_m_);
        if (first_error_) break;
      }
      const auto now = Clock::now();
      if (opt_.stop.max_seconds && seconds_between(t0_, now) >= *opt_.stop.max_seconds) {
        request_stop();
        break;
      }
      if (opt_.stop.max_updates && metrics_.updates_total() >= *opt_.stop.max_updates) {
        request_stop();
        break;
      }
      if (opt_.stop.target_score &&
          metrics_.episodes_total() >= 30 &&
          metrics_.rolling_score_mean() >= *opt_.stop.target_score) {
        request_stop();
        break;
      }
      if (now >= next_frame) {
        frames_.push_back(metrics_.snapshot(static_cast<int>(n_a_.load()),
                                            static_cast<int>(n_p_.load()),
                                            static_cast<int>(n_t_.load())));
        next_frame += std::chrono::duration_cast<Clock::duration>(
            std::chrono::duration<double>(interval));
      }

      if (ann) {
        const double into_epoch = seconds_between(epoch_start, now);
        if (half_updates < 0 && into_epoch >= opt_.epoch_s / 2.0) {
          half_updates = metrics_.updates_total();
          half_time = now;
        } else if (half_updates >= 0 && into_epoch >= opt_.epoch_s) {
          const double measured = static_cast<double>(metrics_.updates_total() - half_updates) /
                                  seconds_between(half_time, now);
          if (!candidate) {
            // first epoch calibrates the baseline on the initial config
            ann->baseline_tps = measured;
            ann->history.push_back(annealer::HistoryEntry{ann->current, measured, true});
          } else {
            const bool accepted = annealer::decide(*ann, *candidate, measured);
            if (!accepted) apply_knobs(ann->current);
          }
          candidate = annealer::propose(*ann);
          apply_knobs(*candidate);
          epoch_start = Clock::now();
          half_updates = -1;
        }
      }
    }
    if (ann) anneal_history_ = ann->history;
  }

  void join_all() {
    // threads are moved out first: a trainer finishing its last update calls
    // request_stop(), which needs workers_m_, so joining under the lock
    // would deadlock
    std::vector<std::thread> to_join;
    {
      std::lock_guard lk(workers_m_);
      for (auto* pool : {&agents_, &predictors_, &trainers_})
        for (auto& w : *pool)
          if (w.thread.joinable()) to_join.push_back(std::move(w.thread));
    }
    for (auto& t : to_join) t.join();
  }

  void shutdown() {
    request_stop();
    join_all();
    // tail frame so cumulative counters in the csv end at their final values
    frames_.push_back(metrics_.snapshot(static_cast<int>(n_a_.load()),
                                        static_cast<int>(n_p_.load()),
                                        static_cast<int>(n_t_.load())));
    while (auto leftover = train_q_.try_pop())
      left_queued_ += static_cast<std::int64_t>(leftover->experiences.size());
  }

  RunReport make_report() {
    RunReport rep;
    rep.total_updates = metrics_.updates_total();
    rep.skipped_updates = metrics_.skipped_updates();
    rep.total_predictions = metrics_.predictions_total();
    rep.total_episodes = metrics_.episodes_total();
    rep.wall_time_s = seconds_between(t0_, Clock::now());
    rep.avg_tps = rep.total_updates / rep.wall_time_s;
    rep.avg_pps = rep.total_predictions / rep.wall_time_s;
    rep.mean_lag = metrics_.mean_lag_overall();
    rep.final_knobs = opt_.knobs;
    rep.final_knobs.n_agents = static_cast<int>(n_a_.load());
    rep.final_knobs.n_predictors = static_cast<int>(n_p_.load());
    rep.final_knobs.n_trainers = static_cast<int>(n_t_.load());
    rep.final_rolling_score = metrics_.rolling_score_mean();
    rep.episode_scores = metrics_.episode_scores();
    rep.frames = frames_;
    rep.experiences_produced = metrics_.experiences_produced();
    rep.experiences_trained = metrics_.experiences_trained();
    rep.experiences_dropped = metrics_.experiences_dropped();
    rep.experiences_left_queued = left_queued_;
    rep.anneal_history = anneal_history_;
    {
      std::lock_guard lk(traj_m_);
      rep.theta_trajectory = trajectory_;
    }
    rep.final_model = *shared_.snapshot();
    if (!opt_.metrics_out.empty()) {
      metrics::write_frames(opt_.metrics_out, rep.frames);
      rep.metrics_path = opt_.metrics_out;
    }
    return rep;
  }

  PipelineOptions opt_;
  std::size_t slot_cap_;
  SharedModel shared_;
  BoundedChannel<PredictionRequest> pred_q_;
  BoundedChannel<returns::ExperienceBatch> train_q_;
  std::vector<std::unique_ptr<ResponseSlot<PredictionResponse>>> slots_;
  metrics::MetricsCollector metrics_;

  std::mutex workers_m_;
  std::deque<Worker> agents_, predictors_, trainers_;
  int next_agent_id_ = 0;
  std::atomic<std::int64_t> n_a_{0}, n_p_{0}, n_t_{0};

  std::atomic<bool> stop_requested_{false};
  std::atomic<std::int64_t> gate_updates_{0};
  std::atomic<std::int64_t> update_budget_;
  std::mutex gate_m_;
  std::condition_variable gate_cv_;

  std::mutex traj_m_;
  std::vector<std::vector<double>> trajectory_;
  std::function<void(const nnet::ModelState&)> traj_sink_;

  std::mutex err_m_;
  std::exception_ptr first_error_;

  Clock::time_point t0_;
  std::vector<metrics::MetricsFrame> frames_;
  std::vector<annealer::HistoryEntry> anneal_history_;
  std::int64_t left_queued_ = 0;
};

void validate_options(const PipelineOptions& opt) {
  nnet::validate(opt.net);
  nnet::validate(opt.hyper);
  envs::validate(opt.env);
  validate(opt.knobs);
  if (!opt.stop.max_updates && !opt.stop.max_seconds && !opt.stop.target_score)
    throw std::invalid_argument("pipeline: no stop condition set");
  if (opt.stop.max_updates && *opt.stop.max_updates < 1)
    throw std::invalid_argument("pipeline: max_updates must be >= 1");
  if (opt.stop.max_seconds && !(*opt.stop.max_seconds > 0.0))
    throw std::invalid_argument("pipeline: max_seconds must be > 0");
  if (!(opt.metrics_interval_s > 0.0))
    throw std::invalid_argument("pipeline: metrics interval must be > 0");
  if (opt.anneal) {
    if (!(opt.epoch_s > 0.0)) throw std::invalid_argument("pipeline: epoch length must be > 0");
    if (opt.sync_after_submit)
      throw std::invalid_argument("pipeline: lockstep mode cannot anneal");
  }
  if (opt.sync_after_submit) {
    if (opt.knobs.n_agents != 1 || opt.knobs.n_predictors != 1 || opt.knobs.n_trainers != 1 ||
        opt.knobs.min_train_batch != 1)
      throw std::invalid_argument(
          "pipeline: lockstep mode requires one agent, one predictor, one trainer and "
          "min_train_batch 1");
  }
  // the net must actually fit the environment it will be fed
  auto probe = envs::make_env(opt.env);
  if (probe->observation_dim() != opt.net.input_dim)
    throw std::invalid_argument("pipeline: net input_dim does not match env observation_dim");
  if (probe->action_count() != opt.net.n_actions)
    throw std::invalid_argument("pipeline: net n_actions does not match env action_count");
}

}  // namespace

RunReport run(const PipelineOptions& opt) {
  validate_options(opt);
  Engine engine(opt);
  return engine.run_all();
}

}  // namespace qac::pipeline
