#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>
#include <vector>

#include "qac/channel.hpp"

using namespace qac;
using namespace std::chrono_literals;

TEST_CASE("channel is fifo") {
  BoundedChannel<int> ch(8);
  for (int i = 0; i < 5; ++i) CHECK(ch.push(i));
  for (int i = 0; i < 5; ++i) CHECK(*ch.pop() == i);
  CHECK_FALSE(ch.try_pop().has_value());
}

TEST_CASE("push blocks at capacity until a pop makes room") {
  BoundedChannel<int> ch(2);
  CHECK(ch.push(1));
  CHECK(ch.push(2));

  std::atomic<bool> third_done{false};
  std::thread producer([&] {
    ch.push(3);  // must block until the consumer below pops
    third_done.store(true);
  });
  std::this_thread::sleep_for(30ms);
  CHECK_FALSE(third_done.load());
  CHECK(*ch.pop() == 1);
  producer.join();
  CHECK(third_done.load());
  CHECK(ch.size() == 2);
}

TEST_CASE("pop blocks until a push arrives") {
  BoundedChannel<int> ch(2);
  std::optional<int> got;
  std::thread consumer([&] { got = ch.pop(); });
  std::this_thread::sleep_for(20ms);
  CHECK(ch.push(42));
  consumer.join();
  CHECK(got == 42);
}

TEST_CASE("close drains remaining items then reports empty") {
  BoundedChannel<int> ch(4);
  ch.push(1);
  ch.push(2);
  ch.close();
  CHECK_FALSE(ch.push(3));  // no pushes after close
  CHECK(*ch.pop() == 1);
  CHECK(*ch.pop() == 2);
  CHECK_FALSE(ch.pop().has_value());
}

TEST_CASE("close wakes a blocked consumer") {
  BoundedChannel<int> ch(1);
  std::optional<int> got = 7;
  std::thread consumer([&] { got = ch.pop(); });
  std::this_thread::sleep_for(20ms);
  ch.close();
  consumer.join();
  CHECK_FALSE(got.has_value());
}

TEST_CASE("a raised stop flag plus wake_all unblocks both ends") {
  BoundedChannel<int> ch(1);
  std::atomic<bool> stop{false};

  // blocked producer
  ch.push(0);
  std::optional<bool> push_result;
  std::thread producer([&] { push_result = ch.push(1, &stop); });
  // blocked consumer on a second channel
  BoundedChannel<int> ch2(1);
  std::optional<std::optional<int>> pop_result;
  std::thread consumer([&] { pop_result = ch2.pop(&stop); });

  std::this_thread::sleep_for(20ms);
  stop.store(true);
  ch.wake_all();
  ch2.wake_all();
  producer.join();
  consumer.join();
  CHECK(push_result == false);
  REQUIRE(pop_result.has_value());
  CHECK_FALSE(pop_result->has_value());
}

TEST_CASE("many producers and consumers move every item exactly once") {
  BoundedChannel<int> ch(16);
  constexpr int kProducers = 4;
  constexpr int kPerProducer = 500;
  std::vector<std::thread> producers;
  for (int p = 0; p < kProducers; ++p) {
    producers.emplace_back([&, p] {
      for (int i = 0; i < kPerProducer; ++i) ch.push(p * kPerProducer + i);
    });
  }
  std::atomic<long> sum{0};
  std::atomic<int> count{0};
  std::vector<std::thread> consumers;
  for (int c = 0; c < 3; ++c) {
    consumers.emplace_back([&] {
      while (auto v = ch.pop()) {
        sum.fetch_add(*v);
        count.fetch_add(1);
      }
    });
  }
  for (auto& t : producers) t.join();
  ch.close();
  for (auto& t : consumers) t.join();
  const long n = kProducers * kPerProducer;
  CHECK(count.load() == n);
  CHECK(sum.load() == n * (n - 1) / 2);
}

TEST_CASE("response slot hands a value to the matching ticket") {
  ResponseSlot<int> slot;
  std::atomic<bool> stop{false};
  const auto t1 = slot.issue_ticket();
  slot.put(t1, 11);
  CHECK(*slot.take(t1, stop) == 11);

  // take blocks until the put arrives
  const auto t2 = slot.issue_ticket();
  std::optional<int> got;
  std::thread waiter([&] { got = slot.take(t2, stop); });
  std::this_thread::sleep_for(20ms);
  slot.put(t2, 22);
  waiter.join();
  CHECK(got == 22);
}

TEST_CASE("stale responses can neither satisfy nor clobber a newer ticket") {
  ResponseSlot<int> slot;
  std::atomic<bool> stop{false};
  const auto old_ticket = slot.issue_ticket();
  const auto new_ticket = slot.issue_ticket();

  // stale response arrives first: the new take must not accept it
  slot.put(old_ticket, -1);
  std::optional<int> got;
  std::thread waiter([&] { got = slot.take(new_ticket, stop); });
  std::this_thread::sleep_for(20ms);
  slot.put(new_ticket, 99);
  waiter.join();
  CHECK(got == 99);

  // and a stale put after the fresh one must not overwrite it
  const auto a = slot.issue_ticket();
  const auto b = slot.issue_ticket();
  slot.put(b, 7);
  slot.put(a, -7);
  CHECK(*slot.take(b, stop) == 7);
}

TEST_CASE("a stopped take returns nothing") {
  ResponseSlot<int> slot;
  std::atomic<bool> stop{false};
  const auto t = slot.issue_ticket();
  std::optional<int> got = 5;
  std::thread waiter([&] { got = slot.take(t, stop); });
  std::this_thread::sleep_for(20ms);
  stop.store(true);
  slot.wake();
  waiter.join();
  CHECK_FALSE(got.has_value());
}
