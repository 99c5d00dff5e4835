#include <doctest.h>

#include <cmath>

#include "seedgrow/ppo.hpp"

using namespace seedgrow;

namespace {

PolicyArch tiny_arch() {
  PolicyArch a;
  a.pool_grid = 4;
  a.action_grid = 4;
  a.channels = 3;
  a.hidden1 = 6;
  a.hidden2 = 5;
  a.critic_hidden = 4;
  return a;
}

// Phantoms with a hand-made entropy field standing in for a trained
// surrogate: confident on the lesion, uncertain outside the gland.
struct Fixture {
  std::vector<PhantomSample> samples;
  std::vector<Case> cases;
};

Fixture fixture(int n) {
  Fixture f;
  f.samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec;
    spec.dims = {16, 16, 16};
    spec.lesion_radius_range = {2.0, 2.5};
    spec.rng_seed = 300 + i;
    f.samples.push_back(generate(spec));
  }
  for (const auto& s : f.samples) {
    EntropyField e(s.truth.dims());
    for (std::size_t v = 0; v < e.size(); ++v) e[v] = s.truth[v] ? 0.01 : (s.gland[v] ? 0.2 : 0.6);
    f.cases.push_back({std::make_shared<const Volume>(s.volume), e, s.truth, &s});
  }
  return f;
}

std::vector<std::vector<Transition>> collect(const Fixture& f, const PolicyParams& p, int episodes) {
  std::vector<std::vector<Transition>> out;
  for (int k = 0; k < episodes; ++k) {
    const Case& c = f.cases[k % f.cases.size()];
    const SegmentationEnv env(c.volume, c.entropy, c.truth, EnvConfig{});
    out.push_back(rollout(env, sample_seed_in_lesion(*c.sample, k), as_policy_fn(p, ActMode::kSample), 40 + k));
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  PpoConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = PpoConfig{};
  cfg.clip_eps = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = PpoConfig{};
  cfg.gae_lambda = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = PpoConfig{};
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("first update on one transition is a unit Adam step") {
  const Fixture f = fixture(1);
  const PolicyParams p = PolicyParams::initial(tiny_arch(), 5);
  auto buffer = collect(f, p, 1);
  buffer.front().resize(1);
  buffer.front().front().done = true;

  PpoConfig cfg;
  cfg.normalize_advantages = false;
  cfg.updates_per_batch = 1;
  cfg.max_grad_norm = 0.0;
  const PolicyParams q = ppo_update(p, buffer, cfg, 1);

  const Transition& tr = buffer.front().front();
  const double adv = tr.reward - tr.value;
  const std::vector<PpoSample> sample{{encode(tr.state, p.arch), tr.action_cell, tr.log_prob, adv, tr.reward}};
  const Eigen::VectorXd g = ppo_gradient(p, sample, cfg.loss());
  const Eigen::ArrayXd expected = -cfg.learning_rate * g.array() / (g.array().abs() + cfg.adam_eps);
  CHECK(((q.theta - p.theta).array() - expected).abs().maxCoeff() < 1e-12);
  CHECK(q.adam.step == 1);
}

TEST_CASE("update is deterministic in its seed") {
  const Fixture f = fixture(2);
  const PolicyParams p = PolicyParams::initial(tiny_arch(), 6);
  const auto buffer = collect(f, p, 6);
  PpoConfig cfg;
  cfg.minibatch_size = 4;
  UpdateStats s1, s2;
  const PolicyParams a = ppo_update(p, buffer, cfg, 11, &s1);
  const PolicyParams b = ppo_update(p, buffer, cfg, 11, &s2);
  CHECK(a.theta == b.theta);
  CHECK(s1.loss.total == s2.loss.total);
  CHECK(s1.samples > 0);
  CHECK(a.theta != p.theta);
  CHECK(ppo_update(p, buffer, cfg, 12).theta != a.theta);
}

TEST_CASE("gradient clipping bounds the step direction") {
  const Fixture f = fixture(1);
  const PolicyParams p = PolicyParams::initial(tiny_arch(), 7);
  const auto buffer = collect(f, p, 3);
  PpoConfig cfg;
  cfg.max_grad_norm = 1e-6;
  UpdateStats stats;
  CHECK_NOTHROW(ppo_update(p, buffer, cfg, 1, &stats));
  CHECK(stats.grad_norm > 0.0);
}

TEST_CASE("non-finite loss is a numeric error") {
  const Fixture f = fixture(1);
  const PolicyParams p = PolicyParams::initial(tiny_arch(), 8);
  auto buffer = collect(f, p, 1);
  buffer.front().front().reward = std::nan("");
  try {
    ppo_update(p, buffer, PpoConfig{}, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumeric);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
  const std::vector<std::vector<Transition>> empty(2);
  CHECK_THROWS_AS(ppo_update(p, empty, PpoConfig{}, 1), Error);
}

TEST_CASE("training is deterministic and logs every update") {
  const Fixture f = fixture(3);
  AgentTrainConfig cfg;
  cfg.ppo.total_steps = 120;
  cfg.ppo.batch_size = 40;
  cfg.rng_seed = 9;
  int updates = 0;
  long last_steps = 0;
  const PolicyParams a = train_agent(f.cases, tiny_arch(), cfg, [&](const TrainLogRecord& r, const PolicyParams&) {
    ++updates;
    CHECK(r.update == updates);
    CHECK(r.steps > last_steps);
    CHECK(r.stats.samples >= 40);
    CHECK(r.mean_final_dice >= 0.0);
    CHECK(r.mean_final_dice <= 1.0);
    last_steps = r.steps;
  });
  CHECK(updates >= 1);
  CHECK(last_steps >= 120);
  const PolicyParams b = train_agent(f.cases, tiny_arch(), cfg);
  CHECK(encode_policy(a) == encode_policy(b));
  cfg.rng_seed = 10;
  CHECK(encode_policy(train_agent(f.cases, tiny_arch(), cfg)) != encode_policy(a));
}

TEST_CASE("start seeds") {
  const Fixture f = fixture(1);
  const PhantomSample& s = f.samples.front();
  CHECK(s.truth(start_seed(s, StartMode::kInLesion, 3)) == 1);
  CHECK(start_seed(s, StartMode::kGlandCentre, 3) == gland_centre_seed(s));
  PhantomSpec spec;
  spec.dims = {16, 16, 16};
  spec.lesion_count = 0;
  const PhantomSample negative = generate(spec);
  CHECK(negative.gland(start_seed(negative, StartMode::kInLesion, 3)) == 1);
}
