#include "qac/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace qac::metrics {

namespace {

void atomic_max(std::atomic<std::uint64_t>& target, std::uint64_t v) {
  std::uint64_t cur = target.load(std::memory_order_relaxed);
  while (cur < v && !target.compare_exchange_weak(cur, v)) {
  }
}

constexpr const char* kHeader =
    "wall_time_s,tps,pps,mean_lag,max_lag,train_queue_len,pred_batch_mean,"
    "n_a,n_p,n_t,episodes,score_mean,score_max,updates_total";

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("metrics csv: bad numeric field '" + std::string(s) + "'");
  return v;
}

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error("metrics csv: bad integer field '" + std::string(s) + "'");
  return v;
}

}  // namespace

MetricsCollector::MetricsCollector(std::size_t score_window)
    : score_window_(score_window == 0 ? 1 : score_window),
      start_(Clock::now()),
      window_start_(start_) {}

void MetricsCollector::record_update(int n_experiences, std::span<const std::uint64_t> lags,
                                     std::size_t train_queue_len) {
  updates_total_.fetch_add(1, std::memory_order_relaxed);
  updates_w_.fetch_add(1, std::memory_order_relaxed);
  trained_total_.fetch_add(n_experiences, std::memory_order_relaxed);
  std::uint64_t sum = 0, mx = 0;
  for (std::uint64_t l : lags) {
    sum += l;
    mx = std::max(mx, l);
  }
  lag_sum_total_.fetch_add(sum, std::memory_order_relaxed);
  lag_count_total_.fetch_add(static_cast<std::int64_t>(lags.size()), std::memory_order_relaxed);
  lag_sum_w_.fetch_add(sum, std::memory_order_relaxed);
  lag_count_w_.fetch_add(static_cast<std::int64_t>(lags.size()), std::memory_order_relaxed);
  atomic_max(lag_max_w_, mx);
  queue_len_sum_w_.fetch_add(train_queue_len, std::memory_order_relaxed);
}

void MetricsCollector::record_skipped_update() {
  skipped_.fetch_add(1, std::memory_order_relaxed);
}

void MetricsCollector::record_prediction_batch(int batch_size) {
  predictions_total_.fetch_add(batch_size, std::memory_order_relaxed);
  predictions_w_.fetch_add(batch_size, std::memory_order_relaxed);
  batches_w_.fetch_add(1, std::memory_order_relaxed);
}

void MetricsCollector::record_episode(double score) {
  episodes_total_.fetch_add(1, std::memory_order_relaxed);
  std::lock_guard lk(scores_m_);
  scores_.push_back(score);
}

void MetricsCollector::record_produced(std::int64_t n) {
  produced_total_.fetch_add(n, std::memory_order_relaxed);
}

void MetricsCollector::record_dropped(std::int64_t n) {
  dropped_total_.fetch_add(n, std::memory_order_relaxed);
}

MetricsFrame MetricsCollector::snapshot(int n_a, int n_p, int n_t,
                                        std::optional<double> forced_window_s) {
  double window;
  double wall;
  if (forced_window_s) {
    used_forced_ = true;
    window = *forced_window_s;
    forced_wall_s_ += window;
    wall = forced_wall_s_;
  } else {
    const auto now = Clock::now();
    window = seconds_between(window_start_, now);
    window_start_ = now;
    wall = used_forced_ ? forced_wall_s_ + seconds_between(start_, now)
                        : seconds_between(start_, now);
  }
  if (window <= 0.0) window = 1e-9;

  MetricsFrame f;
  f.wall_time_s = wall;
  const std::int64_t u = updates_w_.exchange(0);
  const std::int64_t p = predictions_w_.exchange(0);
  const std::int64_t b = batches_w_.exchange(0);
  const std::uint64_t ls = lag_sum_w_.exchange(0);
  const std::int64_t lc = lag_count_w_.exchange(0);
  const std::uint64_t lm = lag_max_w_.exchange(0);
  const std::uint64_t qs = queue_len_sum_w_.exchange(0);

  f.tps = static_cast<double>(u) / window;
  f.pps = static_cast<double>(p) / window;
  f.mean_lag = lc > 0 ? static_cast<double>(ls) / static_cast<double>(lc) : 0.0;
  f.max_lag = static_cast<double>(lm);
  f.train_queue_len = u > 0 ? static_cast<double>(qs) / static_cast<double>(u) : 0.0;
  f.pred_batch_mean = b > 0 ? static_cast<double>(p) / static_cast<double>(b) : 0.0;
  f.n_a = n_a;
  f.n_p = n_p;
  f.n_t = n_t;
  f.episodes = episodes_total_.load();
  f.updates_total = updates_total_.load();
  {
    std::lock_guard lk(scores_m_);
    const std::size_t n = scores_.size();
    const std::size_t take = std::min(n, score_window_);
    if (take > 0) {
      double sum = 0.0, mx = scores_[n - take];
      for (std::size_t i = n - take; i < n; ++i) {
        sum += scores_[i];
        mx = std::max(mx, scores_[i]);
      }
      f.score_mean = sum / static_cast<double>(take);
      f.score_max = mx;
    }
  }
  return f;
}

double MetricsCollector::mean_lag_overall() const {
  const std::int64_t c = lag_count_total_.load();
  return c > 0 ? static_cast<double>(lag_sum_total_.load()) / static_cast<double>(c) : 0.0;
}

double MetricsCollector::rolling_score_mean() const {
  std::lock_guard lk(scores_m_);
  const std::size_t n = scores_.size();
  const std::size_t take = std::min(n, score_window_);
  if (take == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = n - take; i < n; ++i) sum += scores_[i];
  return sum / static_cast<double>(take);
}

std::vector<double> MetricsCollector::episode_scores() const {
  std::lock_guard lk(scores_m_);
  return scores_;
}

void write_frames(const std::filesystem::path& path, std::span<const MetricsFrame> frames) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metrics csv: cannot open " + path.string() + " for writing");
  out << kHeader << '\n';
  for (const MetricsFrame& f : frames) {
    out << format_double(f.wall_time_s) << ',' << format_double(f.tps) << ','
        << format_double(f.pps) << ',' << format_double(f.mean_lag) << ','
        << format_double(f.max_lag) << ',' << format_double(f.train_queue_len) << ','
        << format_double(f.pred_batch_mean) << ',' << f.n_a << ',' << f.n_p << ',' << f.n_t << ','
        << f.episodes << ',' << format_double(f.score_mean) << ',' << format_double(f.score_max)
        << ',' << f.updates_total << '\n';
  }
  if (!out) throw std::runtime_error("metrics csv: write failed for " + path.string());
}

std::vector<MetricsFrame> read_frames(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("metrics csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics csv: empty file");
  if (line != kHeader) throw std::runtime_error("metrics csv: unexpected header");

  std::vector<MetricsFrame> frames;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::string_view rest(line);
    while (true) {
      const auto pos = rest.find(',');
      if (pos == std::string_view::npos) {
        cols.push_back(rest);
        break;
      }
      cols.push_back(rest.substr(0, pos));
      rest.remove_prefix(pos + 1);
    }
    if (cols.size() != 14) throw std::runtime_error("metrics csv: wrong column count");
    MetricsFrame f;
    f.wall_time_s = parse_double(cols[0]);
    f.tps = parse_double(cols[1]);
    f.pps = parse_double(cols[2]);
    f.mean_lag = parse_double(cols[3]);
    f.max_lag = parse_double(cols[4]);
    f.train_queue_len = parse_double(cols[5]);
    f.pred_batch_mean = parse_double(cols[6]);
    f.n_a = static_cast<int>(parse_int(cols[7]));
    f.n_p = static_cast<int>(parse_int(cols[8]));
    f.n_t = static_cast<int>(parse_int(cols[9]));
    f.episodes = parse_int(cols[10]);
    f.score_mean = parse_double(cols[11]);
    f.score_max = parse_double(cols[12]);
    f.updates_total = parse_int(cols[13]);
    frames.push_back(f);
  }
  return frames;
}

}  // namespace qac::metrics
