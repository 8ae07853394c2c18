#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "qac/util.hpp"

namespace qac::metrics {

// One periodic snapshot row. Rates cover the window since the previous
// snapshot; counters and scores are cumulative at snapshot time.
struct MetricsFrame {
  double wall_time_s = 0.0;
  double tps = 0.0;             // optimizer updates per second
  double pps = 0.0;             // served predictions per second
  double mean_lag = 0.0;        // model versions between acting and training
  double max_lag = 0.0;
  double train_queue_len = 0.0;  // mean depth sampled at each update
  double pred_batch_mean = 0.0;
  int n_a = 0;
  int n_p = 0;
  int n_t = 0;
  std::int64_t episodes = 0;
  double score_mean = 0.0;  // rolling window over recent episodes
  double score_max = 0.0;
  std::int64_t updates_total = 0;
};

// Thread-safe counters fed by every worker; snapshot() drains the current
// window. tps * window sums back to updates_total exactly, which the
// serialization below preserves (shortest-round-trip decimal doubles).
class MetricsCollector {
 public:
  explicit MetricsCollector(std::size_t score_window = 30);

  void record_update(int n_experiences, std::span<const std::uint64_t> lags,
                     std::size_t train_queue_len);
  void record_skipped_update();
  void record_prediction_batch(int batch_size);
  void record_episode(double score);
  void record_produced(std::int64_t n);
  void record_dropped(std::int64_t n);

  // Closes the current window and returns its frame. A forced window length
  // (tests) advances the wall clock by exactly that amount instead of
  // reading the real clock.
  MetricsFrame snapshot(int n_a, int n_p, int n_t,
                        std::optional<double> forced_window_s = std::nullopt);

  std::int64_t updates_total() const { return updates_total_.load(); }
  std::int64_t skipped_updates() const { return skipped_.load(); }
  std::int64_t predictions_total() const { return predictions_total_.load(); }
  std::int64_t episodes_total() const { return episodes_total_.load(); }
  std::int64_t experiences_trained() const { return trained_total_.load(); }
  std::int64_t experiences_produced() const { return produced_total_.load(); }
  std::int64_t experiences_dropped() const { return dropped_total_.load(); }
  double mean_lag_overall() const;
  double rolling_score_mean() const;
  std::vector<double> episode_scores() const;

 private:
  std::size_t score_window_;
  Clock::time_point start_;
  Clock::time_point window_start_;
  double forced_wall_s_ = 0.0;
  bool used_forced_ = false;

  std::atomic<std::int64_t> updates_total_{0};
  std::atomic<std::int64_t> skipped_{0};
  std::atomic<std::int64_t> predictions_total_{0};
  std::atomic<std::int64_t> episodes_total_{0};
  std::atomic<std::int64_t> trained_total_{0};
  std::atomic<std::int64_t> produced_total_{0};
  std::atomic<std::int64_t> dropped_total_{0};
  std::atomic<std::uint64_t> lag_sum_total_{0};
  std::atomic<std::int64_t> lag_count_total_{0};

  // window accumulators, drained by snapshot()
  std::atomic<std::int64_t> updates_w_{0};
  std::atomic<std::int64_t> predictions_w_{0};
  std::atomic<std::int64_t> batches_w_{0};
  std::atomic<std::uint64_t> lag_sum_w_{0};
  std::atomic<std::int64_t> lag_count_w_{0};
  std::atomic<std::uint64_t> lag_max_w_{0};
  std::atomic<std::uint64_t> queue_len_sum_w_{0};

  mutable std::mutex scores_m_;
  std::vector<double> scores_;
};

// CSV with a fixed header. Doubles are written with shortest-form to_chars,
// so read_frames(write_frames(x)) == x bit for bit.
void write_frames(const std::filesystem::path& path, std::span<const MetricsFrame> frames);
std::vector<MetricsFrame> read_frames(const std::filesystem::path& path);

}  // namespace qac::metrics
