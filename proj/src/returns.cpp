#include "qac/returns.hpp"

#include <cmath>
#include <stdexcept>

namespace qac::returns {

std::vector<double> compute_returns(std::span<const double> rewards, bool terminal,
                                    double bootstrap_value, double gamma) {
  if (rewards.empty()) throw std::invalid_argument("compute_returns: empty reward sequence");
  if (!(gamma > 0.0) || gamma > 1.0)
    throw std::invalid_argument("compute_returns: gamma must be in (0, 1]");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("compute_returns: non-finite reward");
  }
  if (!terminal && !std::isfinite(bootstrap_value))
    throw std::invalid_argument("compute_returns: non-finite bootstrap value");

  std::vector<double> out(rewards.size());
  double acc = terminal ? 0.0 : bootstrap_value;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

}  // namespace qac::returns
