#include "qac/annealer.hpp"

#include <stdexcept>

#include "qac/util.hpp"

namespace qac::annealer {

AnnealState make_state(const pipeline::KnobConfig& initial, double epoch_length_s,
                       std::uint64_t seed, const Limits& limits) {
  pipeline::validate(initial);
  if (!(epoch_length_s > 0.0))
    throw std::invalid_argument("annealer: epoch length must be positive");
  if (limits.max_agents < 1 || limits.max_predictors < 1 || limits.max_trainers < 1)
    throw std::invalid_argument("annealer: limits must be >= 1");
  if (initial.n_agents > limits.max_agents || initial.n_predictors > limits.max_predictors ||
      initial.n_trainers > limits.max_trainers)
    throw std::invalid_argument("annealer: initial config exceeds limits");

  AnnealState st;
  st.current = initial;
  st.epoch_length_s = epoch_length_s;
  st.limits = limits;
  st.rng.seed(mix64(seed));
  return st;
}

pipeline::KnobConfig propose(AnnealState& state) {
  for (;;) {
    pipeline::KnobConfig cand = state.current;
    const int knob = static_cast<int>(next_uniform(state.rng) * 3.0);
    const int delta = next_uniform(state.rng) < 0.5 ? -1 : 1;
    int* field = nullptr;
    int limit = 0;
    switch (knob) {
      case 0:
        field = &cand.n_agents;
        limit = state.limits.max_agents;
        break;
      case 1:
        field = &cand.n_predictors;
        limit = state.limits.max_predictors;
        break;
      default:
        field = &cand.n_trainers;
        limit = state.limits.max_trainers;
        break;
    }
    *field += delta;
    if (*field >= 1 && *field <= limit) return cand;
    // off the edge of the legal box, redraw
  }
}

bool decide(AnnealState& state, const pipeline::KnobConfig& candidate, double measured_tps) {
  HistoryEntry entry{candidate, measured_tps, false};
  if (measured_tps > state.baseline_tps) {
    state.current = candidate;
    state.baseline_tps = measured_tps;
    entry.accepted = true;
  } else {
    state.baseline_tps *= (1.0 - state.baseline_decay);
  }
  state.history.push_back(entry);
  return entry.accepted;
}

}  // namespace qac::annealer
