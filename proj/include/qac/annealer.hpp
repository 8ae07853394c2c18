#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qac/knobs.hpp"

namespace qac::annealer {

struct Limits {
  int max_agents = 64;
  int max_predictors = 16;
  int max_trainers = 16;
};

struct HistoryEntry {
  pipeline::KnobConfig knobs;
  double measured_tps = 0.0;
  bool accepted = false;
};

// Random-walk tuner over the three pool sizes. Each epoch one knob moves by
// one step; the move sticks only if measured training throughput beats the
// baseline. The baseline decays on every rejection so a noisy lucky reading
// cannot wedge the search forever.
struct AnnealState {
  pipeline::KnobConfig current;
  double baseline_tps = 0.0;
  double epoch_length_s = 60.0;
  double baseline_decay = 0.01;  // multiplicative, per rejected epoch
  Limits limits;
  std::mt19937_64 rng;
  std::vector<HistoryEntry> history;
};

AnnealState make_state(const pipeline::KnobConfig& initial, double epoch_length_s,
                       std::uint64_t seed, const Limits& limits = Limits{});

// One candidate: pick one of {agents, predictors, trainers} uniformly, move
// it +-1, redraw until the result stays inside [1, limit]. Never returns the
// unchanged current config.
pipeline::KnobConfig propose(AnnealState& state);

// Accept iff measured_tps beats the baseline. Accepting installs the
// candidate and its reading as the new baseline; rejecting keeps the current
// config and decays the baseline. Returns true on accept.
bool decide(AnnealState& state, const pipeline::KnobConfig& candidate, double measured_tps);

}  // namespace qac::annealer
