#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qac::returns {

// One environment transition as seen by the agent that played it.
// value_at_play and produced_version come from the prediction service
// response used to pick the action, so training can measure how stale the
// acting model was by the time the sample reaches an optimizer step.
struct Experience {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  double value_at_play = 0.0;
  std::uint64_t produced_version = 0;
};

struct ExperienceBatch {
  std::vector<Experience> experiences;
  std::vector<double> returns;  // n-step discounted returns, same length
  bool terminal = false;
  int agent_id = 0;
};

// n-step discounted returns, computed backward:
//   R_j = r_j + gamma * R_{j+1},   R_n = terminal ? 0 : bootstrap_value
// The tail value estimate stands in for everything past the segment cut.
std::vector<double> compute_returns(std::span<const double> rewards, bool terminal,
                                    double bootstrap_value, double gamma);

}  // namespace qac::returns
