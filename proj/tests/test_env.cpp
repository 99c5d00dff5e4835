#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "seedgrow/env.hpp"
#include "seedgrow/phantom.hpp"

using namespace seedgrow;

namespace {

// 8^3 grid with a homogeneous 3^3 lesion at the centre. Entropy is zero on
// the lesion and ln 2 elsewhere, so growing from any lesion voxel returns
// exactly the lesion and growing from anywhere else returns only the seed.
struct Cube {
  std::shared_ptr<const Volume> x;
  EntropyField e;
  Mask truth;
};

Cube cube() {
  const Dims d{8, 8, 8};
  auto x = std::make_shared<Volume>(d, 1);
  Mask truth(d);
  EntropyField e(d, std::numbers::ln2);
  for (int a = 3; a < 6; ++a)
    for (int b = 3; b < 6; ++b)
      for (int c = 3; c < 6; ++c) {
        truth({a, b, c}) = 1;
        e({a, b, c}) = 0.0;
        x->at(0, VoxelIndex{a, b, c}) = 0.4f;  // edge std stays below tau_sigma
      }
  return {x, e, truth};
}

EnvConfig config(double beta, int horizon = 10) {
  EnvConfig cfg;
  cfg.beta = beta;
  cfg.horizon = horizon;
  return cfg;
}

SegmentationEnv phantom_env(std::uint64_t seed, double beta) {
  PhantomSpec spec;
  spec.rng_seed = seed;
  spec.mimic_count = seed % 2;
  PhantomSample s = generate(spec);
  EntropyField e(s.truth.dims());
  Rng rng(seed);
  for (std::size_t i = 0; i < e.size(); ++i)
    e[i] = s.truth[i] ? rng.uniform(0.0, 0.05) : (s.gland[i] ? rng.uniform(0.0, 0.2) : rng.uniform(0.3, 0.69));
  return SegmentationEnv(std::make_shared<const Volume>(std::move(s.volume)), std::move(e), std::move(s.truth),
                         config(beta));
}

PolicyFn uniform_policy(const Dims& d) {
  return [d](const EnvState&, Rng& rng) {
    PolicyChoice c;
    c.action = d.unflat(rng.below(d.size()));
    return c;
  };
}

}  // namespace

TEST_CASE("stepping to the same seed is a fixed point") {
  const Cube c = cube();
  const SegmentationEnv env(c.x, c.e, c.truth, config(0.8));
  const EnvState s0 = env.reset({4, 4, 4});
  CHECK(*s0.mask == c.truth);
  const Transition t = env.step(s0, {4, 4, 4});
  CHECK(*t.next_state.mask == *s0.mask);
  CHECK(t.done);
  CHECK(t.next_state.terminal);
  CHECK(t.dice_reward == 0.0);
  CHECK_THROWS_AS(env.step(t.next_state, {0, 0, 0}), Error);
}

TEST_CASE("moving from background into the lesion earns about one") {
  const Cube c = cube();
  const SegmentationEnv env(c.x, c.e, c.truth, config(0.0));
  const EnvState s0 = env.reset({0, 0, 0});
  CHECK(count(*s0.mask) == 1);
  CHECK(dice_loss(*s0.mask, c.truth) == doctest::Approx(1.0).epsilon(1e-6));
  const Transition t = env.step(s0, {3, 4, 5});
  CHECK(*t.next_state.mask == c.truth);
  CHECK(t.reward == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(t.reward > 0.0);
  CHECK(t.entropy_bonus == 0.0);
  CHECK_FALSE(t.done);

  const Transition back = env.step(t.next_state, {0, 0, 0});
  CHECK(back.reward == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("reward terms") {
  const Dims d{4, 4, 4};
  Mask y(d), truth(d);
  y({1, 1, 1}) = 1;
  y({1, 1, 2}) = 1;
  truth({1, 1, 1}) = 1;
  const EntropyField half(d, std::numbers::ln2);

  const RewardTerms same = reward_of(y, y, truth, half, 0.0);
  CHECK(same.total == 0.0);
  const RewardTerms bonus = reward_of(y, y, truth, half, 0.8);
  CHECK(bonus.dice == 0.0);
  CHECK(bonus.entropy == doctest::Approx(0.8 * std::numbers::ln2).epsilon(1e-12));
  CHECK(bonus.total == doctest::Approx(0.5545).epsilon(1e-4));
  CHECK(reward_of(y, Mask(d), truth, half, 0.8).entropy == 0.0);

  EntropyField ramp(d);
  ramp({1, 1, 1}) = 0.2;
  ramp({1, 1, 2}) = 0.4;
  CHECK(mean_entropy(y, ramp) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(mean_entropy(Mask(d), ramp) == 0.0);
}

TEST_CASE("dice rewards telescope over 100 random rollouts") {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const SegmentationEnv env = phantom_env(k / 10, 0.8);
    const auto& truth = *env.truth();
    // Half the episodes start in the lesion so masks vary in size.
    const VoxelIndex start = env.volume().dims().unflat(Rng(k).below(env.volume().voxel_count()));
    const auto ep = rollout(env, start, uniform_policy(env.volume().dims()), 5000 + k);
    REQUIRE(!ep.empty());
    CHECK(ep.size() <= 10);
    double sum = 0.0;
    for (std::size_t t = 0; t < ep.size(); ++t) {
      sum += ep[t].dice_reward;
      CHECK(ep[t].done == (t + 1 == ep.size()));
      CHECK(ep[t].reward == doctest::Approx(ep[t].dice_reward + ep[t].entropy_bonus).epsilon(1e-12));
      CHECK(ep[t].dice_reward >= -1.0);
      CHECK(ep[t].dice_reward <= 1.0);
      CHECK(ep[t].entropy_bonus >= 0.0);
      CHECK(ep[t].entropy_bonus <= 0.8 * std::numbers::ln2 + 1e-12);
    }
    const double expected = dice_loss(*ep.front().state.mask, truth) - dice_loss(*ep.back().next_state.mask, truth);
    worst = std::max(worst, std::abs(sum - expected));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("the next mask depends only on the action") {
  const SegmentationEnv env = phantom_env(3, 0.8);
  const EnvState a = env.reset({16, 16, 16});
  const EnvState b = env.reset({2, 2, 2});
  for (const VoxelIndex act : {VoxelIndex{10, 12, 14}, VoxelIndex{16, 16, 16}, VoxelIndex{0, 31, 5}}) {
    const Transition ta = env.step(a, act);
    const Transition tb = env.step(b, act);
    CHECK(*ta.next_state.mask == *tb.next_state.mask);
    CHECK(*ta.next_state.mask == env.grow_from(act).mask);
  }
}

TEST_CASE("horizon bounds the episode") {
  const Cube c = cube();
  const SegmentationEnv env(c.x, c.e, c.truth, config(0.8, 3));
  // Alternating seeds never stabilise, so the horizon ends the episode.
  auto alternate = [](const EnvState& s, Rng&) {
    PolicyChoice p;
    p.action = s.step_index % 2 ? VoxelIndex{0, 0, 0} : VoxelIndex{4, 4, 4};
    return p;
  };
  const auto ep = rollout(env, {0, 0, 0}, alternate, 1);
  CHECK(ep.size() == 3);
  CHECK(ep.back().done);
  CHECK(ep.back().next_state.step_index == 3);
}

TEST_CASE("discounted return matches a direct sum") {
  const SegmentationEnv env = phantom_env(1, 0.8);
  const auto ep = rollout(env, {16, 16, 16}, uniform_policy(env.volume().dims()), 9);
  for (double gamma : {0.0, 0.5, 0.99, 1.0}) {
    double brute = 0.0;
    for (std::size_t t = 0; t < ep.size(); ++t) brute += std::pow(gamma, static_cast<double>(t)) * ep[t].reward;
    CHECK(discounted_return(ep, gamma) == doctest::Approx(brute).epsilon(1e-14));
  }
}

TEST_CASE("rollouts are deterministic in the seed") {
  const SegmentationEnv env = phantom_env(2, 0.8);
  const auto policy = uniform_policy(env.volume().dims());
  const auto a = rollout(env, {16, 16, 16}, policy, 77);
  const auto b = rollout(env, {16, 16, 16}, policy, 77);
  CHECK(encode_episode(a) == encode_episode(b));
}

TEST_CASE("episode log round trip") {
  const SegmentationEnv env = phantom_env(4, 0.8);
  const auto ep = rollout(env, {16, 16, 16}, uniform_policy(env.volume().dims()), 3);
  const auto path = std::filesystem::temp_directory_path() / "seedgrow_test_env.epl";
  write_episode(path, ep);
  const auto back = read_episode(path);
  std::filesystem::remove(path);
  REQUIRE(back.size() == ep.size());
  for (std::size_t t = 0; t < ep.size(); ++t) {
    CHECK(back[t].action == ep[t].action);
    CHECK(back[t].reward == ep[t].reward);
    CHECK(back[t].dice_reward == ep[t].dice_reward);
    CHECK(back[t].entropy_bonus == ep[t].entropy_bonus);
    CHECK(back[t].done == ep[t].done);
    CHECK(back[t].state.step_index == ep[t].state.step_index);
    CHECK(*back[t].state.mask == *ep[t].state.mask);
    CHECK(*back[t].next_state.mask == *ep[t].next_state.mask);
  }
  std::string bytes = encode_episode(ep);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_episode(bytes), Error);
}

TEST_CASE("invalid configuration and actions") {
  const Cube c = cube();
  CHECK_THROWS_AS(SegmentationEnv(c.x, c.e, c.truth, config(-1.0)), Error);
  CHECK_THROWS_AS(SegmentationEnv(c.x, c.e, c.truth, config(0.8, 0)), Error);
  CHECK_THROWS_AS(SegmentationEnv(c.x, EntropyField({8, 8, 9}), c.truth, config(0.8)), Error);
  const SegmentationEnv env(c.x, c.e, c.truth, config(0.8));
  CHECK_THROWS_AS(env.reset({8, 0, 0}), Error);
  CHECK_THROWS_AS(env.step(env.reset({0, 0, 0}), {0, -1, 0}), Error);
}

TEST_CASE("rewards are zero without a truth mask") {
  const Cube c = cube();
  const SegmentationEnv env(c.x, c.e, std::nullopt, config(0.8));
  const Transition t = env.step(env.reset({0, 0, 0}), {4, 4, 4});
  CHECK(t.reward == 0.0);
  CHECK(*t.next_state.mask == c.truth);
}
