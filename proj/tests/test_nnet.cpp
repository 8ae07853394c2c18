#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "qac/nnet.hpp"
#include "qac/returns.hpp"
#include "qac/util.hpp"

using namespace qac;
using nnet::Hyperparams;
using nnet::ModelState;
using nnet::NetworkSpec;
using returns::Experience;
using returns::ExperienceBatch;

namespace {

// Loss evaluator for the finite-difference oracle. Reimplements the loss
// formula on top of forward() only; the advantage is frozen at the base
// parameters, matching its constant treatment inside the policy term.
double frozen_loss(const ModelState& model, const NetworkSpec& spec, const Hyperparams& hp,
                   const ExperienceBatch& batch, const std::vector<double>& frozen_adv) {
  double loss = 0.0;
  for (std::size_t n = 0; n < batch.experiences.size(); ++n) {
    const auto& e = batch.experiences[n];
    std::vector<std::vector<double>> one{e.state};
    const auto fr = nnet::forward(model, spec, one);
    const auto& pi = fr.policies[0];
    const double V = fr.values[0];
    const double R = batch.returns[n];
    double H = 0.0;
    for (double p : pi) H -= p * std::log(p + hp.eps_log);
    loss += -std::log(pi[static_cast<std::size_t>(e.action)] + hp.eps_log) * frozen_adv[n];
    loss += -hp.beta * H;
    loss += hp.value_loss_weight * (R - V) * (R - V);
  }
  return loss;
}

ExperienceBatch random_batch(const NetworkSpec& spec, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ExperienceBatch batch;
  for (int i = 0; i < n; ++i) {
    Experience e;
    e.state.resize(static_cast<std::size_t>(spec.input_dim));
    for (double& x : e.state) x = next_uniform(rng) * 2.0 - 1.0;
    e.action = static_cast<int>(next_uniform(rng) * spec.n_actions);
    batch.experiences.push_back(std::move(e));
    batch.returns.push_back(next_uniform(rng) * 4.0 - 2.0);
  }
  return batch;
}

void check_gradient_against_fd(const NetworkSpec& spec, const Hyperparams& hp,
                               const ExperienceBatch& batch, std::uint64_t model_seed) {
  ModelState model = nnet::init_model(spec, model_seed);

  // freeze advantages at the base parameters
  std::vector<std::vector<double>> states;
  for (const auto& e : batch.experiences) states.push_back(e.state);
  const auto base = nnet::forward(model, spec, states);
  std::vector<double> adv(batch.experiences.size());
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = batch.returns[i] - base.values[i];

  const auto pkt = nnet::loss_and_gradients(model, spec, hp, batch);
  REQUIRE(pkt.dtheta.size() == model.theta.size());

  int worst_i = -1;
  double worst = 0.0;
  for (std::size_t i = 0; i < model.theta.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::abs(model.theta[i]));
    ModelState plus = model, minus = model;
    plus.theta[i] += h;
    minus.theta[i] -= h;
    const double fd =
        (frozen_loss(plus, spec, hp, batch, adv) - frozen_loss(minus, spec, hp, batch, adv)) /
        (2.0 * h);
    const double a = pkt.dtheta[i];
    double err;
    if (std::abs(a) < 1e-8 && std::abs(fd) < 1e-8) {
      err = std::abs(a - fd);
    } else {
      err = std::abs(a - fd) / std::max(std::abs(a), std::abs(fd));
    }
    if (err > worst) {
      worst = err;
      worst_i = static_cast<int>(i);
    }
  }
  INFO("worst component ", worst_i, " rel err ", worst);
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("parameter layout count for the documented example shape") {
  NetworkSpec spec{4, {8}, 3};
  // 4*8+8 trunk, 8*3+3 policy head, 8*1+1 value head
  CHECK(nnet::param_count(spec) == 76);
  CHECK(nnet::param_count(NetworkSpec{2, {}, 2}) == 2 * 2 + 2 + 2 + 1);
  CHECK(nnet::param_count(NetworkSpec{5, {7, 3}, 4}) ==
        (5 * 7 + 7) + (7 * 3 + 3) + (3 * 4 + 4) + (3 + 1));
}

TEST_CASE("init is seed-deterministic with zero biases and bounded weights") {
  NetworkSpec spec{4, {8}, 3};
  const auto a = nnet::init_model(spec, 7);
  const auto b = nnet::init_model(spec, 7);
  const auto c = nnet::init_model(spec, 8);
  CHECK(a.theta == b.theta);
  CHECK(a.theta != c.theta);
  CHECK(a.version == 0);

  // hidden weights bounded by 1/sqrt(4), heads by 1/sqrt(8); biases zero
  for (std::size_t i = 0; i < 32; ++i) CHECK(std::abs(a.theta[i]) <= 0.5);
  for (std::size_t i = 32; i < 40; ++i) CHECK(a.theta[i] == 0.0);
  const double head_bound = 1.0 / std::sqrt(8.0);
  for (std::size_t i = 40; i < 64; ++i) CHECK(std::abs(a.theta[i]) <= head_bound);
  for (std::size_t i = 64; i < 67; ++i) CHECK(a.theta[i] == 0.0);
  for (std::size_t i = 67; i < 75; ++i) CHECK(std::abs(a.theta[i]) <= head_bound);
  CHECK(a.theta[75] == 0.0);
}

TEST_CASE("forward produces normalized policies and stays finite on extreme inputs") {
  NetworkSpec spec{3, {6}, 4};
  const auto model = nnet::init_model(spec, 11);
  std::vector<std::vector<double>> states{{0.1, -0.2, 0.3}, {1e6, -1e6, 1e6}, {0.0, 0.0, 0.0}};
  const auto fr = nnet::forward(model, spec, states);
  REQUIRE(fr.policies.size() == 3);
  for (const auto& pi : fr.policies) {
    double sum = 0.0;
    for (double p : pi) {
      CHECK(std::isfinite(p));
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (double v : fr.values) CHECK(std::isfinite(v));
}

TEST_CASE("forward rejects malformed states") {
  NetworkSpec spec{3, {}, 2};
  const auto model = nnet::init_model(spec, 1);
  std::vector<std::vector<double>> wrong_dim{{1.0, 2.0}};
  CHECK_THROWS_AS(nnet::forward(model, spec, wrong_dim), std::invalid_argument);
  std::vector<std::vector<double>> with_nan{{1.0, std::nan(""), 0.0}};
  CHECK_THROWS_AS(nnet::forward(model, spec, with_nan), std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
  Hyperparams hp;  // defaults: beta 0.01, eps_log 1e-6, value weight 0.5
  SUBCASE("documented example shape, 5-experience batch") {
    NetworkSpec spec{4, {8}, 3};
    check_gradient_against_fd(spec, hp, random_batch(spec, 5, 101), 202);
  }
  SUBCASE("no hidden layer") {
    NetworkSpec spec{3, {}, 2};
    check_gradient_against_fd(spec, hp, random_batch(spec, 4, 303), 404);
  }
  SUBCASE("two hidden layers") {
    NetworkSpec spec{5, {6, 4}, 3};
    check_gradient_against_fd(spec, hp, random_batch(spec, 6, 505), 606);
  }
  SUBCASE("zero entropy weight") {
    hp.beta = 0.0;
    NetworkSpec spec{4, {8}, 3};
    check_gradient_against_fd(spec, hp, random_batch(spec, 5, 707), 808);
  }
}

TEST_CASE("gradients are summed over the batch, not averaged") {
  NetworkSpec spec{4, {8}, 3};
  Hyperparams hp;
  const auto model = nnet::init_model(spec, 5);
  auto batch = random_batch(spec, 1, 6);
  const auto one = nnet::loss_and_gradients(model, spec, hp, batch);

  // duplicate the sample: every gradient component must exactly double
  batch.experiences.push_back(batch.experiences[0]);
  batch.returns.push_back(batch.returns[0]);
  const auto two = nnet::loss_and_gradients(model, spec, hp, batch);
  for (std::size_t i = 0; i < one.dtheta.size(); ++i)
    CHECK(two.dtheta[i] == doctest::Approx(2.0 * one.dtheta[i]).epsilon(1e-12));
  CHECK(two.batch_size == 2);
}

TEST_CASE("epsilon keeps the collapsed-policy gradient finite and bounded") {
  // Saturate the softmax by injecting a huge state through an identity-ish
  // trunkless net so the played action has probability ~0.
  NetworkSpec spec{2, {}, 2};
  Hyperparams hp;
  ModelState model;
  model.theta.assign(nnet::param_count(spec), 0.0);
  // logits: u0 = 40 * x0, u1 = 40 * x1
  model.theta[0] = 40.0;  // W_pol[0][0]
  model.theta[3] = 40.0;  // W_pol[1][1]

  ExperienceBatch batch;
  Experience e;
  e.state = {1.0, 0.0};  // pi ~ (1, e^-40)
  e.action = 1;          // play the collapsed action
  batch.experiences.push_back(e);
  batch.returns.push_back(2.0);

  std::vector<std::vector<double>> one{batch.experiences[0].state};
  const auto fr = nnet::forward(model, spec, one);
  const double pa = fr.policies[0][1];
  CHECK(pa < 1e-15);  // far below eps_log
  const double adv = batch.returns[0] - fr.values[0];

  const auto pkt = nnet::loss_and_gradients(model, spec, hp, batch);
  for (double g : pkt.dtheta) CHECK(std::isfinite(g));

  // the pick term is -adv / (pi_a + eps); with eps in place it cannot exceed
  // |adv| / eps no matter how collapsed the policy is
  const double bound = std::abs(adv) / hp.eps_log;
  const double pick = std::abs(-adv / (pa + hp.eps_log));
  CHECK(pick <= bound);
  CHECK(std::isfinite(pick));
  // and the raw form without eps would have been |adv| / pa, astronomically
  // larger than the stabilized bound
  CHECK(std::abs(adv) / pa > bound * 1e6);
}

TEST_CASE("entropy helper handles collapsed and uniform policies") {
  const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25};
  CHECK(nnet::policy_entropy(uniform, 0.0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  const std::vector<double> collapsed{1.0, 0.0, 0.0, 0.0};
  CHECK(nnet::policy_entropy(collapsed, 0.0) == 0.0);
  CHECK(std::isfinite(nnet::policy_entropy(collapsed, 1e-6)));
}

TEST_CASE("rmsprop single-parameter arithmetic, accumulator first") {
  NetworkSpec spec{1, {}, 2};
  Hyperparams hp;
  hp.alpha = 0.99;
  hp.eta = 0.1;
  hp.eps_rms = 1e-8;

  ModelState model;
  model.theta.assign(nnet::param_count(spec), 0.0);
  model.theta[0] = 1.0;
  nnet::RmsState rms = nnet::init_rms(spec);
  nnet::GradientPacket pkt;
  pkt.dtheta.assign(model.theta.size(), 0.0);
  pkt.dtheta[0] = 2.0;

  const auto res = nnet::rmsprop_update(model, rms, pkt, hp);
  REQUIRE(res.applied);
  // hand arithmetic: g = 0.99*0 + (1-0.99)*2*2
  //                  theta = 1 - 0.1 * 2 / sqrt(g + 1e-8)
  const double g = 0.99 * 0.0 + (1.0 - 0.99) * 2.0 * 2.0;
  const double expect = 1.0 - 0.1 * 2.0 / std::sqrt(g + 1e-8);
  CHECK(res.rms.g[0] == g);
  CHECK(res.model.theta[0] == expect);
  CHECK(res.model.version == 1);
  // untouched components stay put
  CHECK(res.model.theta[1] == 0.0);

  // second step: the accumulator must be updated before use
  nnet::GradientPacket pkt2;
  pkt2.dtheta.assign(model.theta.size(), 0.0);
  pkt2.dtheta[0] = -1.0;
  const auto res2 = nnet::rmsprop_update(res.model, res.rms, pkt2, hp);
  const double g2 = 0.99 * g + (1.0 - 0.99) * 1.0 * 1.0;
  const double expect2 = expect + 0.1 * 1.0 / std::sqrt(g2 + 1e-8);
  CHECK(res2.rms.g[0] == g2);
  CHECK(res2.model.theta[0] == expect2);
  CHECK(res2.model.version == 2);
}

TEST_CASE("non-finite gradients reject the update and leave inputs untouched") {
  NetworkSpec spec{2, {}, 2};
  Hyperparams hp;
  const auto model = nnet::init_model(spec, 3);
  auto rms = nnet::init_rms(spec);
  rms.g[0] = 0.5;
  nnet::GradientPacket pkt;
  pkt.dtheta.assign(model.theta.size(), 0.0);
  pkt.dtheta[1] = std::numeric_limits<double>::quiet_NaN();

  const auto res = nnet::rmsprop_update(model, rms, pkt, hp);
  CHECK_FALSE(res.applied);
  CHECK(res.model.theta == model.theta);
  CHECK(res.model.version == model.version);
  CHECK(res.rms.g == rms.g);
}

TEST_CASE("optional gradient norm clip, off by default") {
  NetworkSpec spec{4, {8}, 3};
  Hyperparams hp;
  const auto model = nnet::init_model(spec, 21);
  const auto batch = random_batch(spec, 5, 22);

  const auto raw = nnet::loss_and_gradients(model, spec, hp, batch);
  double norm = 0.0;
  for (double g : raw.dtheta) norm += g * g;
  norm = std::sqrt(norm);
  REQUIRE(norm > 0.02);  // otherwise the clip below would be a no-op

  hp.grad_clip_norm = 0.01;
  const auto clipped = nnet::loss_and_gradients(model, spec, hp, batch);
  double cnorm = 0.0;
  for (double g : clipped.dtheta) cnorm += g * g;
  cnorm = std::sqrt(cnorm);
  CHECK(cnorm == doctest::Approx(0.01).epsilon(1e-9));
  // direction preserved
  CHECK(clipped.dtheta[0] * raw.dtheta[0] >= 0.0);
}

TEST_CASE("loss_and_gradients input validation") {
  NetworkSpec spec{2, {}, 2};
  Hyperparams hp;
  const auto model = nnet::init_model(spec, 1);
  ExperienceBatch empty;
  CHECK_THROWS_AS(nnet::loss_and_gradients(model, spec, hp, empty), std::invalid_argument);

  ExperienceBatch bad_action;
  bad_action.experiences.push_back(Experience{{0.0, 0.0}, 5, 0.0, 0.0, 0});
  bad_action.returns.push_back(1.0);
  CHECK_THROWS_AS(nnet::loss_and_gradients(model, spec, hp, bad_action), std::invalid_argument);

  ExperienceBatch mismatch;
  mismatch.experiences.push_back(Experience{{0.0, 0.0}, 0, 0.0, 0.0, 0});
  CHECK_THROWS_AS(nnet::loss_and_gradients(model, spec, hp, mismatch), std::invalid_argument);
}

TEST_CASE("spec and hyperparameter validation") {
  CHECK_THROWS_AS(nnet::validate(NetworkSpec{0, {}, 2}), std::invalid_argument);
  CHECK_THROWS_AS(nnet::validate(NetworkSpec{2, {}, 1}), std::invalid_argument);
  CHECK_THROWS_AS(nnet::validate(NetworkSpec{2, {0}, 2}), std::invalid_argument);
  Hyperparams hp;
  hp.gamma = 0.0;
  CHECK_THROWS_AS(nnet::validate(hp), std::invalid_argument);
  hp = Hyperparams{};
  hp.alpha = 1.0;
  CHECK_THROWS_AS(nnet::validate(hp), std::invalid_argument);
  hp = Hyperparams{};
  hp.eps_log = 0.0;
  CHECK_THROWS_AS(nnet::validate(hp), std::invalid_argument);
  CHECK_NOTHROW(nnet::validate(Hyperparams{}));
}
