#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

namespace qac {

// Bounded multi-producer multi-consumer queue. Blocking ends are stop-aware:
// a waiter re-checks its caller's stop flag whenever wake_all() fires, so
// worker shutdown never needs polling timeouts.
template <typename T>
class BoundedChannel {
 public:
  explicit BoundedChannel(std::size_t capacity) : cap_(capacity == 0 ? 1 : capacity) {}

  // Blocks while full. Returns false (item dropped) if the channel is closed
  // or the stop flag is raised before space opens up.
  bool push(T item, const std::atomic<bool>* stop = nullptr) {
    std::unique_lock lk(m_);
    not_full_.wait(lk, [&] { return closed_ || q_.size() < cap_ || stopped(stop); });
    if (closed_ || stopped(stop)) return false;
    q_.push_back(std::move(item));
    lk.unlock();
    not_empty_.notify_one();
    return true;
  }

  // Blocks while empty. Empty optional means closed-and-drained or stopped.
  std::optional<T> pop(const std::atomic<bool>* stop = nullptr) {
    std::unique_lock lk(m_);
    not_empty_.wait(lk, [&] { return closed_ || !q_.empty() || stopped(stop); });
    if (q_.empty() || stopped(stop)) return std::nullopt;
    std::optional<T> out(std::move(q_.front()));
    q_.pop_front();
    lk.unlock();
    not_full_.notify_one();
    return out;
  }

  std::optional<T> try_pop() {
    std::unique_lock lk(m_);
    if (q_.empty()) return std::nullopt;
    std::optional<T> out(std::move(q_.front()));
    q_.pop_front();
    lk.unlock();
    not_full_.notify_one();
    return out;
  }

  void close() {
    {
      std::lock_guard lk(m_);
      closed_ = true;
    }
    wake_all();
  }

  // Kicks every blocked producer and consumer so they re-check stop flags.
  void wake_all() {
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lk(m_);
    return q_.size();
  }

  bool closed() const {
    std::lock_guard lk(m_);
    return closed_;
  }

 private:
  static bool stopped(const std::atomic<bool>* stop) {
    return stop != nullptr && stop->load(std::memory_order_relaxed);
  }

  mutable std::mutex m_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> q_;
  std::size_t cap_;
  bool closed_ = false;
};

// Single-value rendezvous used to hand a prediction back to the one agent
// waiting on it. put() never blocks (each agent has at most one in flight).
// Tickets are monotone per slot: if a worker slot is recycled while an old
// request is still in flight, the stale response can neither be taken nor
// overwrite a newer one.
template <typename T>
class ResponseSlot {
 public:
  std::uint64_t issue_ticket() { return seq_.fetch_add(1, std::memory_order_relaxed) + 1; }

  void put(std::uint64_t ticket, T value) {
    {
      std::lock_guard lk(m_);
      if (!value_.has_value() || ticket > ticket_) {
        ticket_ = ticket;
        value_ = std::move(value);
      }
    }
    cv_.notify_all();
  }

  std::optional<T> take(std::uint64_t ticket, const std::atomic<bool>& stop) {
    std::unique_lock lk(m_);
    cv_.wait(lk, [&] {
      return (value_.has_value() && ticket_ == ticket) || stop.load(std::memory_order_relaxed);
    });
    if (!value_.has_value() || ticket_ != ticket) return std::nullopt;
    std::optional<T> out = std::move(value_);
    value_.reset();
    return out;
  }

  void wake() { cv_.notify_all(); }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::atomic<std::uint64_t> seq_{0};
  std::uint64_t ticket_ = 0;
  std::optional<T> value_;
};

}  // namespace qac
