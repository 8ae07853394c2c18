#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "qac/returns.hpp"

namespace qac::nnet {

// Fully connected actor-critic net: shared ReLU trunk, softmax policy head,
// linear scalar value head.
struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int n_actions = 0;
};

struct Hyperparams {
  double gamma = 0.99;
  int t_max = 5;
  double beta = 0.01;       // entropy bonus weight
  double eps_log = 1e-6;    // added inside log() and entropy terms
  double eta = 3e-4;        // learning rate (1e-4 is the conservative preset)
  double alpha = 0.99;      // rmsprop decay
  double eps_rms = 1e-8;
  double value_loss_weight = 0.5;
  double grad_clip_norm = 0.0;  // 0 disables clipping (the default)
  bool clip_rewards = false;    // parity experiments only
};

// Flat parameter vector plus a monotone version counter bumped by every
// applied optimizer step.
struct ModelState {
  std::vector<double> theta;
  std::uint64_t version = 0;
};

// Per-parameter second-moment accumulator for non-centered rmsprop.
struct RmsState {
  std::vector<double> g;
};

// Summed (not averaged) gradient over one training batch, with the scalar
// diagnostics that produced it.
struct GradientPacket {
  std::vector<double> dtheta;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  int batch_size = 0;
};

struct ForwardResult {
  std::vector<std::vector<double>> policies;  // one simplex row per state
  std::vector<double> values;
};

struct UpdateResult {
  ModelState model;
  RmsState rms;
  bool applied = false;  // false means non-finite gradient, inputs returned unchanged
};

void validate(const NetworkSpec& spec);
void validate(const Hyperparams& hp);

// Total parameter count for the flat theta layout: each hidden layer's
// weights then bias, followed by the policy head and the value head.
std::size_t param_count(const NetworkSpec& spec);

// Weights drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
// Same seed, same layout, same parameters, on any platform.
ModelState init_model(const NetworkSpec& spec, std::uint64_t seed);

RmsState init_rms(const NetworkSpec& spec);

// Batched forward pass. Softmax is computed with the max logit subtracted,
// so extreme logits saturate instead of overflowing.
ForwardResult forward(const ModelState& model, const NetworkSpec& spec,
                      std::span<const std::vector<double>> states);

// H(pi) = -sum_a pi_a * log(pi_a + eps). The epsilon keeps a fully collapsed
// policy's entropy finite so the bonus gradient cannot blow up.
double policy_entropy(std::span<const double> policy, double eps_log);

// Loss over a batch with precomputed returns R:
//   L = -sum [ log(pi_a + eps) * (R - V) ] - beta * sum H(pi)
//       + value_loss_weight * sum (R - V)^2
// The advantage (R - V) is treated as a constant in the policy term: the
// value head only learns through the squared error term. Gradients are
// summed over the batch and hand-derived (chain rule through the softmax
// and the ReLU trunk); no autodiff involved.
GradientPacket loss_and_gradients(const ModelState& model, const NetworkSpec& spec,
                                  const Hyperparams& hp, const returns::ExperienceBatch& batch);

// Non-centered rmsprop. Order matters and is pinned by a digit-level test:
//   g <- alpha * g + (1 - alpha) * dtheta^2      (accumulator first)
//   theta <- theta - eta * dtheta / sqrt(g + eps)
// A non-finite gradient rejects the step: inputs come back unchanged with
// applied = false and the version does not advance.
UpdateResult rmsprop_update(const ModelState& model, const RmsState& rms,
                            const GradientPacket& grads, const Hyperparams& hp);

}  // namespace qac::nnet
