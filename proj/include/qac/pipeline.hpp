#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qac/annealer.hpp"
#include "qac/channel.hpp"
#include "qac/envs.hpp"
#include "qac/knobs.hpp"
#include "qac/metrics.hpp"
#include "qac/nnet.hpp"
#include "qac/returns.hpp"

namespace qac::pipeline {

struct PredictionRequest {
  int agent_id = 0;
  std::uint64_t ticket = 0;  // matches the response back to the exact wait
  std::vector<double> state;
};

struct PredictionResponse {
  std::vector<double> policy;
  double value = 0.0;
  std::uint64_t model_version = 0;
};

// run() stops at the first satisfied condition; at least one must be set.
// The command line restricts this further to exactly one.
struct StopCondition {
  std::optional<std::int64_t> max_updates;
  std::optional<double> max_seconds;
  std::optional<double> target_score;  // rolling episode-score mean
};

struct RunReport {
  std::int64_t total_updates = 0;
  std::int64_t skipped_updates = 0;
  std::int64_t total_predictions = 0;
  std::int64_t total_episodes = 0;
  double wall_time_s = 0.0;
  double avg_tps = 0.0;
  double avg_pps = 0.0;
  double mean_lag = 0.0;  // over every trained experience
  KnobConfig final_knobs;
  double final_rolling_score = 0.0;
  std::vector<double> episode_scores;
  std::vector<metrics::MetricsFrame> frames;
  std::string metrics_path;
  // conservation: produced == trained + left_queued + dropped
  std::int64_t experiences_produced = 0;
  std::int64_t experiences_trained = 0;
  std::int64_t experiences_dropped = 0;
  std::int64_t experiences_left_queued = 0;
  std::vector<annealer::HistoryEntry> anneal_history;
  std::vector<std::vector<double>> theta_trajectory;  // post-update thetas, when captured
  nnet::ModelState final_model;
};

struct PipelineOptions {
  nnet::NetworkSpec net;
  nnet::Hyperparams hyper;
  envs::EnvSpec env;
  KnobConfig knobs;
  StopCondition stop;
  std::uint64_t seed = 1;
  bool anneal = false;
  double epoch_s = 60.0;
  annealer::Limits limits;
  double metrics_interval_s = 1.0;
  std::string metrics_out;  // empty keeps frames in memory only
  bool greedy = false;
  // Lockstep mode for equivalence checks: after submitting a batch the agent
  // blocks until it has been applied. Requires the 1/1/1 configuration with
  // min_train_batch 1 and no annealing.
  bool sync_after_submit = false;
  bool capture_trajectory = false;
};

// Single source of truth for parameters. Readers take immutable snapshots,
// so a forward pass can never observe a torn write or a version that does
// not match its weights. Writers are serialized; the gradient for a step is
// computed outside the lock, which is exactly the staleness the lag metric
// measures.
class SharedModel {
 public:
  SharedModel(nnet::ModelState init, nnet::RmsState rms);

  std::shared_ptr<const nnet::ModelState> snapshot() const;
  std::shared_ptr<const nnet::RmsState> rms_snapshot() const;
  std::uint64_t version() const;

  // One rmsprop step on the current parameters. Returns the version the step
  // applied on top of, or nothing if the gradient was rejected (non-finite).
  std::optional<std::uint64_t> apply(const nnet::GradientPacket& grads,
                                     const nnet::Hyperparams& hp,
                                     const std::function<void(const nnet::ModelState&)>& on_applied = {});

 private:
  mutable std::mutex read_m_;
  std::mutex update_m_;
  std::shared_ptr<const nnet::ModelState> model_;
  std::shared_ptr<const nnet::RmsState> rms_;
};

// Serves prediction requests in batches: blocks for the first request, then
// drains whatever else is queued up to pred_batch_max and answers them all
// with one forward pass on one model snapshot. Exposed for direct tests; the
// engine runs the same loop.
void predictor_loop(BoundedChannel<PredictionRequest>& requests,
                    std::span<const std::unique_ptr<ResponseSlot<PredictionResponse>>> slots,
                    SharedModel& model, const nnet::NetworkSpec& spec, int pred_batch_max,
                    metrics::MetricsCollector& metrics, const std::atomic<bool>& stop);

RunReport run(const PipelineOptions& opt);

}  // namespace qac::pipeline
