#pragma once

#include <chrono>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace qac {

using Clock = std::chrono::steady_clock;

inline double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration_cast<std::chrono::duration<double>>(b - a).count();
}

// splitmix64 finalizer; used for all seed derivation so that every worker,
// episode and subsystem gets an independent deterministic stream.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> salts) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t s : salts) h = mix64(h ^ s);
  return h;
}

// Seed-derivation tags. Shared between the concurrent pipeline and the
// synchronous reference trainer so both produce identical streams.
inline constexpr std::uint64_t kSeedModelInit = 0x6d6f64656cULL;
inline constexpr std::uint64_t kSeedAgentRng = 0x6167656e74ULL;
inline constexpr std::uint64_t kSeedEnvEpisode = 0x656e76ULL;

// Uniform double in [0, 1) with 53 random bits. Hand-rolled instead of
// std::uniform_real_distribution, whose output is implementation-defined;
// this keeps every seeded draw bit-reproducible.
inline double next_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF sample from a probability vector. One rng draw per call.
inline int sample_index(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = next_uniform(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

// First index of the maximum (deterministic tie break).
inline int argmax_index(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

// Spin until `us` microseconds have elapsed. Emulates a CPU-bound simulator
// step; sleeping would free the core and hide the contention being studied.
inline void busy_wait_us(std::int64_t us) {
  if (us <= 0) return;
  const auto until = Clock::now() + std::chrono::microseconds(us);
  while (Clock::now() < until) {
    // spin
  }
}

}  // namespace qac
