#include "qac/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "qac/util.hpp"

namespace qac::nnet {

namespace {

struct Slice {
  std::size_t w_off = 0;
  std::size_t b_off = 0;
  int in = 0;
  int out = 0;
};

// Offsets of every layer inside the flat theta vector.
struct Layout {
  std::vector<Slice> hidden;
  Slice policy;
  Slice value;
  std::size_t total = 0;
};

Layout layout_of(const NetworkSpec& spec) {
  Layout lo;
  std::size_t off = 0;
  int prev = spec.input_dim;
  for (int h : spec.hidden_dims) {
    Slice s{off, off + static_cast<std::size_t>(prev) * h, prev, h};
    off = s.b_off + h;
    lo.hidden.push_back(s);
    prev = h;
  }
  lo.policy = {off, off + static_cast<std::size_t>(prev) * spec.n_actions, prev, spec.n_actions};
  off = lo.policy.b_off + spec.n_actions;
  lo.value = {off, off + static_cast<std::size_t>(prev), prev, 1};
  off = lo.value.b_off + 1;
  lo.total = off;
  return lo;
}

// y = W x + b, with W stored row-major (out x in).
void affine(std::span<const double> theta, const Slice& s, std::span<const double> x,
            std::span<double> y) {
  for (int o = 0; o < s.out; ++o) {
    double acc = theta[s.b_off + o];
    const double* row = theta.data() + s.w_off + static_cast<std::size_t>(o) * s.in;
    for (int i = 0; i < s.in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// Gradient of an affine layer. Accumulates into dtheta and writes dx.
void affine_backward(std::span<const double> theta, const Slice& s, std::span<const double> x,
                     std::span<const double> dy, std::span<double> dtheta, std::span<double> dx) {
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = 0.0;
  for (int o = 0; o < s.out; ++o) {
    const double g = dy[o];
    dtheta[s.b_off + o] += g;
    const std::size_t row = s.w_off + static_cast<std::size_t>(o) * s.in;
    const double* w = theta.data() + row;
    double* dw = dtheta.data() + row;
    for (int i = 0; i < s.in; ++i) {
      dw[i] += g * x[i];
      dx[i] += g * w[i];
    }
  }
}

void check_state(const std::vector<double>& state, int input_dim) {
  if (static_cast<int>(state.size()) != input_dim)
    throw std::invalid_argument("nnet: state dimension mismatch");
  for (double v : state) {
    if (!std::isfinite(v)) throw std::invalid_argument("nnet: non-finite state component");
  }
}

// Shared single-sample forward keeping all activations for backprop.
struct Activations {
  std::vector<std::vector<double>> hidden;  // post-ReLU per hidden layer
  std::vector<double> logits;
  std::vector<double> policy;
  double value = 0.0;
};

Activations forward_one(std::span<const double> theta, const Layout& lo, const NetworkSpec& spec,
                        const std::vector<double>& state) {
  Activations act;
  std::span<const double> x(state);
  act.hidden.reserve(lo.hidden.size());
  for (const Slice& s : lo.hidden) {
    std::vector<double> h(static_cast<std::size_t>(s.out));
    affine(theta, s, x, h);
    for (double& v : h) v = std::max(v, 0.0);
    act.hidden.push_back(std::move(h));
    x = std::span<const double>(act.hidden.back());
  }
  act.logits.resize(static_cast<std::size_t>(spec.n_actions));
  affine(theta, lo.policy, x, act.logits);
  double vout[1];
  affine(theta, lo.value, x, std::span<double>(vout, 1));
  act.value = vout[0];

  // max-subtracted softmax
  const double m = *std::max_element(act.logits.begin(), act.logits.end());
  act.policy.resize(act.logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < act.logits.size(); ++i) {
    act.policy[i] = std::exp(act.logits[i] - m);
    z += act.policy[i];
  }
  for (double& p : act.policy) p /= z;
  return act;
}

}  // namespace

void validate(const NetworkSpec& spec) {
  if (spec.input_dim <= 0) throw std::invalid_argument("NetworkSpec: input_dim must be positive");
  if (spec.n_actions < 2) throw std::invalid_argument("NetworkSpec: need at least two actions");
  for (int h : spec.hidden_dims) {
    if (h <= 0) throw std::invalid_argument("NetworkSpec: hidden dims must be positive");
  }
}

void validate(const Hyperparams& hp) {
  if (!(hp.gamma > 0.0) || hp.gamma > 1.0)
    throw std::invalid_argument("Hyperparams: gamma must be in (0, 1]");
  if (hp.t_max < 1) throw std::invalid_argument("Hyperparams: t_max must be >= 1");
  if (hp.beta < 0.0) throw std::invalid_argument("Hyperparams: beta must be >= 0");
  if (!(hp.eps_log > 0.0)) throw std::invalid_argument("Hyperparams: eps_log must be > 0");
  if (!(hp.eta > 0.0)) throw std::invalid_argument("Hyperparams: eta must be > 0");
  if (!(hp.alpha >= 0.0) || hp.alpha >= 1.0)
    throw std::invalid_argument("Hyperparams: alpha must be in [0, 1)");
  if (!(hp.eps_rms > 0.0)) throw std::invalid_argument("Hyperparams: eps_rms must be > 0");
  if (hp.value_loss_weight < 0.0)
    throw std::invalid_argument("Hyperparams: value_loss_weight must be >= 0");
  if (hp.grad_clip_norm < 0.0)
    throw std::invalid_argument("Hyperparams: grad_clip_norm must be >= 0");
}

std::size_t param_count(const NetworkSpec& spec) {
  validate(spec);
  return layout_of(spec).total;
}

ModelState init_model(const NetworkSpec& spec, std::uint64_t seed) {
  validate(spec);
  const Layout lo = layout_of(spec);
  ModelState m;
  m.theta.assign(lo.total, 0.0);
  std::mt19937_64 rng(seed);
  auto fill = [&](const Slice& s) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i)
      m.theta[s.w_off + i] = (next_uniform(rng) * 2.0 - 1.0) * bound;
    // biases stay zero
  };
  for (const Slice& s : lo.hidden) fill(s);
  fill(lo.policy);
  fill(lo.value);
  return m;
}

RmsState init_rms(const NetworkSpec& spec) {
  return RmsState{std::vector<double>(param_count(spec), 0.0)};
}

ForwardResult forward(const ModelState& model, const NetworkSpec& spec,
                      std::span<const std::vector<double>> states) {
  validate(spec);
  const Layout lo = layout_of(spec);
  if (model.theta.size() != lo.total)
    throw std::invalid_argument("forward: theta size does not match spec");

  ForwardResult out;
  out.policies.reserve(states.size());
  out.values.reserve(states.size());
  for (const auto& state : states) {
    check_state(state, spec.input_dim);
    Activations act = forward_one(model.theta, lo, spec, state);
    out.policies.push_back(std::move(act.policy));
    out.values.push_back(act.value);
  }
  return out;
}

double policy_entropy(std::span<const double> policy, double eps_log) {
  double h = 0.0;
  for (double p : policy) {
    if (p > 0.0 || eps_log > 0.0) h -= p * std::log(p + eps_log);
  }
  return h;
}

GradientPacket loss_and_gradients(const ModelState& model, const NetworkSpec& spec,
                                  const Hyperparams& hp, const returns::ExperienceBatch& batch) {
  validate(spec);
  validate(hp);
  const Layout lo = layout_of(spec);
  if (model.theta.size() != lo.total)
    throw std::invalid_argument("loss_and_gradients: theta size does not match spec");
  if (batch.experiences.empty())
    throw std::invalid_argument("loss_and_gradients: empty batch");
  if (batch.returns.size() != batch.experiences.size())
    throw std::invalid_argument("loss_and_gradients: returns/experiences length mismatch");

  GradientPacket pkt;
  pkt.dtheta.assign(lo.total, 0.0);
  pkt.batch_size = static_cast<int>(batch.experiences.size());
  std::span<const double> theta(model.theta);
  const double eps = hp.eps_log;

  // scratch reused across samples
  std::vector<double> dpol, dlogits, dx, dnext;

  for (std::size_t n = 0; n < batch.experiences.size(); ++n) {
    const auto& e = batch.experiences[n];
    const double R = batch.returns[n];
    if (!std::isfinite(R)) throw std::invalid_argument("loss_and_gradients: non-finite return");
    check_state(e.state, spec.input_dim);
    if (e.action < 0 || e.action >= spec.n_actions)
      throw std::invalid_argument("loss_and_gradients: action out of range");

    Activations act = forward_one(theta, lo, spec, e.state);
    const double adv = R - act.value;  // constant w.r.t. theta in the policy term
    const double pa = act.policy[static_cast<std::size_t>(e.action)];
    const double H = policy_entropy(act.policy, eps);

    pkt.policy_loss += -std::log(pa + eps) * adv - hp.beta * H;
    pkt.value_loss += adv * adv;
    pkt.entropy += H;

    // dL/dpi_k: pick term only at the played action, entropy term everywhere.
    const std::size_t A = act.policy.size();
    dpol.assign(A, 0.0);
    for (std::size_t k = 0; k < A; ++k) {
      const double p = act.policy[k];
      dpol[k] = hp.beta * (std::log(p + eps) + p / (p + eps));
    }
    dpol[static_cast<std::size_t>(e.action)] += -adv / (pa + eps);

    // Through the softmax Jacobian: dL/du_j = pi_j * (dpol_j - sum_k dpol_k pi_k).
    double dot = 0.0;
    for (std::size_t k = 0; k < A; ++k) dot += dpol[k] * act.policy[k];
    dlogits.assign(A, 0.0);
    for (std::size_t j = 0; j < A; ++j) dlogits[j] = act.policy[j] * (dpol[j] - dot);

    const double dvalue = -2.0 * hp.value_loss_weight * adv;

    // Back through both heads into the trunk output.
    std::span<const double> trunk_out =
        lo.hidden.empty() ? std::span<const double>(e.state)
                          : std::span<const double>(act.hidden.back());
    dx.assign(trunk_out.size(), 0.0);
    dnext.assign(trunk_out.size(), 0.0);
    affine_backward(theta, lo.policy, trunk_out, dlogits, pkt.dtheta, dx);
    const double dv[1] = {dvalue};
    affine_backward(theta, lo.value, trunk_out, std::span<const double>(dv, 1), pkt.dtheta, dnext);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dnext[i];

    // Trunk, last layer to first. ReLU gate uses the stored activations.
    for (std::size_t li = lo.hidden.size(); li-- > 0;) {
      const Slice& s = lo.hidden[li];
      for (int o = 0; o < s.out; ++o) {
        if (act.hidden[li][static_cast<std::size_t>(o)] <= 0.0) dx[static_cast<std::size_t>(o)] = 0.0;
      }
      std::span<const double> x_in = li == 0 ? std::span<const double>(e.state)
                                             : std::span<const double>(act.hidden[li - 1]);
      dnext.assign(x_in.size(), 0.0);
      affine_backward(theta, s, x_in, dx, pkt.dtheta, dnext);
      dx = dnext;
    }
  }

  if (hp.grad_clip_norm > 0.0) {
    double sq = 0.0;
    for (double g : pkt.dtheta) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > hp.grad_clip_norm) {
      const double scale = hp.grad_clip_norm / norm;
      for (double& g : pkt.dtheta) g *= scale;
    }
  }
  return pkt;
}

UpdateResult rmsprop_update(const ModelState& model, const RmsState& rms,
                            const GradientPacket& grads, const Hyperparams& hp) {
  validate(hp);
  if (grads.dtheta.size() != model.theta.size() || rms.g.size() != model.theta.size())
    throw std::invalid_argument("rmsprop_update: size mismatch");

  for (double g : grads.dtheta) {
    if (!std::isfinite(g)) return UpdateResult{model, rms, false};
  }

  UpdateResult res{model, rms, true};
  for (std::size_t i = 0; i < res.model.theta.size(); ++i) {
    const double d = grads.dtheta[i];
    double& acc = res.rms.g[i];
    acc = hp.alpha * acc + (1.0 - hp.alpha) * d * d;
    res.model.theta[i] -= hp.eta * d / std::sqrt(acc + hp.eps_rms);
  }
  res.model.version = model.version + 1;
  return res;
}

}  // namespace qac::nnet
