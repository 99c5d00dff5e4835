#include <doctest.h>

#include <cmath>

#include "fd.hpp"
#include "seedgrow/phantom.hpp"
#include "seedgrow/policy.hpp"
#include "seedgrow/ppo.hpp"

using namespace seedgrow;

namespace {

PolicyArch tiny_arch() {
  PolicyArch a;
  a.pool_grid = 2;
  a.action_grid = 2;
  a.hidden1 = 5;
  a.hidden2 = 4;
  a.critic_hidden = 3;
  return a;
}

EncodedState random_input(const PolicyArch& arch, Rng& rng) {
  EncodedState s{Eigen::MatrixXd(arch.cell_count(), arch.input_width())};
  for (Eigen::Index i = 0; i < s.cells.size(); ++i) s.cells.data()[i] = rng.uniform(-1.0, 1.0);
  return s;
}

// Three transitions with mixed-sign advantages; old log-probs are offset from
// the current policy: the first sample sits on the clipped branch, the
// others on the unclipped one.
std::vector<PpoSample> toy_buffer(const PolicyParams& params) {
  Rng rng(77);
  std::vector<PpoSample> out;
  const double offsets[] = {-0.5, -0.5, 0.05};
  const double advantages[] = {1.3, -0.7, 0.9};
  for (int k = 0; k < 3; ++k) {
    PpoSample s;
    s.input = random_input(params.arch, rng);
    s.cell = k * 3 % params.arch.cell_count();
    s.old_log_prob = evaluate(params, s.input).dist.log_probs[s.cell] + offsets[k];
    s.advantage = advantages[k];
    s.target_return = 0.4 * k - 0.3;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("parameter count matches the layout") {
  const PolicyArch a = tiny_arch();
  const int d = a.input_width();
  CHECK(d == 12);
  CHECK(a.param_count() == 5 * d + 5 + 4 * 5 + 4 + 4 + 3 * 4 + 3 + 3 + 1);
  CHECK(PolicyParams::initial(a, 1).theta.size() == a.param_count());
}

TEST_CASE("action distribution invariants") {
  Eigen::VectorXd logits(5);
  logits << 0.3, -1.2, 2.0, 0.0, 2.0;
  const auto d = ActionDistribution::from_logits(logits);
  CHECK(d.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((d.probs.array() >= 0.0).all());
  CHECK(d.greedy() == 2);

  const auto shifted = ActionDistribution::from_logits((logits.array() + 123.0).matrix());
  CHECK((shifted.probs - d.probs).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(shifted.greedy() == d.greedy());

  SUBCASE("uniform logits pick the lowest index") {
    CHECK(ActionDistribution::from_logits(Eigen::VectorXd::Zero(7)).greedy() == 0);
  }
  SUBCASE("a saturated logit is always sampled") {
    Eigen::VectorXd l = Eigen::VectorXd::Zero(6);
    l[4] = 1000.0;
    const auto sat = ActionDistribution::from_logits(l);
    Rng rng(5);
    int hits = 0;
    for (int i = 0; i < 1000; ++i) hits += sat.sample(rng) == 4;
    CHECK(hits == 1000);
  }
}

TEST_CASE("sampling frequencies lie within 3 sigma of the softmax") {
  Eigen::VectorXd logits(4);
  logits << 0.5, -0.25, 1.0, 0.0;
  const auto d = ActionDistribution::from_logits(logits);
  Rng rng(2024);
  const int n = 10000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n; ++i) ++counts[d.sample(rng)];
  for (int k = 0; k < 4; ++k) {
    const double p = d.probs[k];
    const double sigma = std::sqrt(n * p * (1.0 - p));
    CHECK(std::abs(counts[k] - n * p) <= 3.0 * sigma);
  }
}

TEST_CASE("clipped surrogate takes the pessimistic branch") {
  CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(1.2 * 2.0));
  CHECK(clipped_surrogate(1.5, 2.0, 0.2) == 1.2 * 2.0);
  CHECK(clipped_surrogate(0.5, 2.0, 0.2) == 0.5 * 2.0);
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == 0.8 * -1.0);
  CHECK(clipped_surrogate(1.5, -1.0, 0.2) == 1.5 * -1.0);
}

TEST_CASE("ppo gradient matches central differences") {
  PolicyParams p = PolicyParams::initial(tiny_arch(), 3);
  Rng rng(8);
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += rng.uniform(-0.3, 0.3);
  const auto buffer = toy_buffer(p);
  const PpoLossConfig cfg;
  const Eigen::VectorXd analytic = ppo_gradient(p, buffer, cfg);
  const Eigen::VectorXd numeric = testing::central_difference(
      [&](const Eigen::VectorXd& th) {
        PolicyParams q = p;
        q.theta = th;
        return ppo_loss(q, buffer, cfg).total;
      },
      p.theta);
  CHECK(testing::max_relative_error(analytic, numeric) < 1e-3);
}

TEST_CASE("zero advantages give no policy gradient") {
  PolicyParams p = PolicyParams::initial(tiny_arch(), 4);
  auto buffer = toy_buffer(p);
  for (auto& s : buffer) s.advantage = 0.0;
  PpoLossConfig cfg;
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  const Eigen::VectorXd g = ppo_gradient(p, buffer, cfg);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gae closed forms on a three-step episode") {
  const std::vector<double> r{1.0, -0.5, 2.0};
  const std::vector<double> v{0.2, 0.4, -0.1};
  const double g = 0.9;
  SUBCASE("lambda 0 is the one-step TD error") {
    const auto a = gae(r, v, 0.0, g, 0.0);
    CHECK(a[0] == doctest::Approx(1.0 + g * 0.4 - 0.2));
    CHECK(a[1] == doctest::Approx(-0.5 + g * -0.1 - 0.4));
    CHECK(a[2] == doctest::Approx(2.0 - -0.1));
  }
  SUBCASE("lambda 1 is the discounted return minus the value") {
    const auto a = gae(r, v, 0.0, g, 1.0);
    CHECK(a[0] == doctest::Approx(1.0 + g * -0.5 + g * g * 2.0 - 0.2));
    CHECK(a[1] == doctest::Approx(-0.5 + g * 2.0 - 0.4));
    CHECK(a[2] == doctest::Approx(2.0 + 0.1));
  }
  SUBCASE("bootstrap enters the last delta") {
    const auto a = gae(r, v, 0.5, g, 0.0);
    CHECK(a[2] == doctest::Approx(2.0 + g * 0.5 + 0.1));
  }
}

TEST_CASE("policy persists through ppm") {
  PolicyParams p = PolicyParams::initial(tiny_arch(), 6);
  p.theta = p.theta.cast<float>().cast<double>();
  p.adam.m = Eigen::VectorXd::Constant(p.theta.size(), 0.25);
  p.adam.v = Eigen::VectorXd::Constant(p.theta.size(), 0.5);
  p.adam.step = 17;
  const PolicyParams q = decode_policy(encode_policy(p));
  CHECK(q.arch == p.arch);
  CHECK(q.theta == p.theta);
  CHECK(q.adam.m == p.adam.m);
  CHECK(q.adam.v == p.adam.v);
  CHECK(q.adam.step == 17);
}
