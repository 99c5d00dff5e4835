#include <doctest.h>

#include <chrono>
#include <cmath>
#include <vector>

#include "seedgrow/region_grow.hpp"
#include "seedgrow/rng.hpp"

using namespace seedgrow;

namespace {

// Independent reference: naive per-voxel gate, depth-first fill visiting
// neighbours in reverse order.
Mask reference_fill(const Volume& x, const EntropyField& e, const VoxelIndex& seed, const GrowConfig& cfg) {
  const Dims& d = x.dims();
  auto passes = [&](const VoxelIndex& v) {
    if (e(v) >= cfg.tau_e) return false;
    double worst = 0.0;
    for (int ch = 0; ch < x.channels(); ++ch) {
      double s = 0.0, s2 = 0.0;
      int n = 0;
      for (int a = v.a - cfg.radius.a; a <= v.a + cfg.radius.a; ++a)
        for (int b = v.b - cfg.radius.b; b <= v.b + cfg.radius.b; ++b)
          for (int c = v.c - cfg.radius.c; c <= v.c + cfg.radius.c; ++c) {
            if (!d.contains({a, b, c})) continue;
            const double val = x.at(ch, VoxelIndex{a, b, c});
            s += val;
            s2 += val * val;
            ++n;
          }
      const double mean = s / n;
      worst = std::max(worst, std::sqrt(std::max(0.0, s2 / n - mean * mean)));
    }
    return worst < cfg.tau_sigma;
  };
  Mask out(d);
  std::vector<VoxelIndex> stack{seed};
  out(seed) = 1;
  while (!stack.empty()) {
    const VoxelIndex v = stack.back();
    stack.pop_back();
    for (int a = v.a + cfg.radius.a; a >= v.a - cfg.radius.a; --a)
      for (int b = v.b + cfg.radius.b; b >= v.b - cfg.radius.b; --b)
        for (int c = v.c + cfg.radius.c; c >= v.c - cfg.radius.c; --c) {
          const VoxelIndex n{a, b, c};
          if (!d.contains(n) || out(n) || !passes(n)) continue;
          out(n) = 1;
          stack.push_back(n);
        }
  }
  return out;
}

// Piecewise-constant blocks with light noise and a random entropy field, so
// roughly half the voxels are admissible and components have varied shapes.
struct RandomCase {
  Volume x;
  EntropyField e;
  VoxelIndex seed;
};

RandomCase random_case(std::uint64_t seed) {
  Rng rng(seed);
  const Dims d{16, 16, 16};
  RandomCase rc{Volume(d, 2), EntropyField(d), {}};
  const int block = rng.between(2, 5);
  std::vector<float> levels(2 * 512);
  for (auto& l : levels) l = static_cast<float>(rng.uniform());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const VoxelIndex v = d.unflat(i);
    const int cell = (v.a / block) * 64 + (v.b / block) * 8 + v.c / block;
    for (int ch = 0; ch < 2; ++ch)
      rc.x.at(ch, i) = levels[ch * 512 + cell] * 0.6f + static_cast<float>(0.05 * rng.normal());
    rc.e[i] = rng.uniform(0.0, 0.18);
  }
  rc.seed = {rng.between(0, 15), rng.between(0, 15), rng.between(0, 15)};
  return rc;
}

bool subset(const Mask& a, const Mask& b) {
  return ((a.array() > 0) <= (b.array() > 0)).all();
}

}  // namespace

TEST_CASE("grow equals the flood-fill oracle on 200 random 16^3 cases") {
  const auto t0 = std::chrono::steady_clock::now();
  GrowConfig cfg = GrowConfig::desk_preset();
  cfg.tau_sigma = 0.1;
  cfg.max_iters = 4096;
  std::size_t nontrivial = 0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const RandomCase rc = random_case(7000 + k);
    const GrowResult r = grow(rc.x, rc.e, rc.seed, cfg);
    REQUIRE(r.converged);
    const Mask oracle = grow_oracle(rc.x, rc.e, rc.seed, cfg);
    CHECK(r.mask == oracle);
    CHECK(r.mask == reference_fill(rc.x, rc.e, rc.seed, cfg));
    nontrivial += count(r.mask) > 1;
  }
  CHECK(nontrivial > 100);
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(30));
}

TEST_CASE("constant volume with zero entropy fills the grid") {
  Volume x({9, 7, 5}, 3);
  x.data().setConstant(0.4f);
  const GrowResult r = grow(x, EntropyField(x.dims()), {4, 3, 2}, GrowConfig::desk_preset());
  CHECK(r.converged);
  CHECK(count(r.mask) == x.voxel_count());
}

TEST_CASE("all gates closed keeps only the seed") {
  Volume x({8, 8, 8}, 1);
  const EntropyField e(x.dims(), 0.5);
  const GrowResult r = grow(x, e, {3, 3, 3}, GrowConfig::desk_preset());
  CHECK(count(r.mask) == 1);
  CHECK(r.mask({3, 3, 3}) == 1);
  CHECK(r.iterations_run == 1);
  CHECK(r.converged);
  CHECK(grow_oracle(x, e, {3, 3, 3}, GrowConfig::desk_preset()) == r.mask);
}

TEST_CASE("high-std shell separates two blobs") {
  const Dims d{20, 12, 12};
  Volume x(d, 1);
  Mask blob_a(d), blob_b(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const VoxelIndex v = d.unflat(i);
    const double ra = std::hypot(v.a - 5, v.b - 6, v.c - 6);
    const double rb = std::hypot(v.a - 14, v.b - 6, v.c - 6);
    if (ra <= 3.0) blob_a[i] = 1;
    if (rb <= 3.0) blob_b[i] = 1;
    // Alternating shell outside both blobs.
    x.at(0, i) = (blob_a[i] || blob_b[i]) ? 0.8f : ((v.a + v.b + v.c) % 2 ? 1.0f : 0.0f);
  }
  const EntropyField e(d);
  GrowConfig cfg = GrowConfig::desk_preset();
  const GrowResult r = grow(x, e, {5, 6, 6}, cfg);
  CHECK(r.converged);
  CHECK(count(r.mask) > 1);
  CHECK(subset(r.mask, blob_a));
  Mask overlap_b(d);
  overlap_b.array() = r.mask.array() * blob_b.array();
  CHECK(count(overlap_b) == 0);
}

TEST_CASE("growth properties") {
  GrowConfig cfg = GrowConfig::desk_preset();
  cfg.tau_sigma = 0.1;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const RandomCase rc = random_case(900 + k);
    cfg.max_iters = 4096;
    const GrowResult full = grow(rc.x, rc.e, rc.seed, cfg);
    const Mask admissible = admissible_set(rc.x, rc.e, cfg);

    CHECK(full.mask(rc.seed) == 1);
    // Gate soundness.
    for (std::size_t i = 0; i < full.mask.size(); ++i)
      if (full.mask[i] && rc.x.dims().unflat(i) != rc.seed) CHECK(admissible[i] == 1);
    // Frontier bookkeeping accounts for every voxel.
    std::size_t added = 1;
    for (auto n : full.frontier_history) added += n;
    CHECK(added == count(full.mask));
    CHECK(full.frontier_history.back() == 0);

    // Monotone in the iteration cap, and capped runs report non-convergence.
    Mask prev = Mask(rc.x.dims());
    prev(rc.seed) = 1;
    for (int j = 1; j <= full.iterations_run; ++j) {
      cfg.max_iters = j;
      const GrowResult capped = grow(admissible, rc.seed, cfg);
      CHECK(subset(prev, capped.mask));
      CHECK(capped.converged == (j == full.iterations_run));
      prev = capped.mask;
    }
    CHECK(prev == full.mask);
  }
}

TEST_CASE("wide preset reaches across radius 3") {
  const GrowConfig wide;
  CHECK(wide.radius == VoxelIndex{3, 3, 3});
  CHECK(wide.window_volume() == 343);
  CHECK(GrowConfig::desk_preset().window_volume() == 27);

  Mask admissible({12, 1, 1});
  admissible[3] = 1;  // two-voxel gap from the seed at 0
  admissible[6] = 1;
  const GrowResult r = grow(admissible, {0, 0, 0}, wide);
  CHECK(count(r.mask) == 3);
  GrowConfig desk = wide;
  desk.radius = {1, 1, 1};
  CHECK(count(grow(admissible, {0, 0, 0}, desk).mask) == 1);
}

TEST_CASE("invalid inputs") {
  Volume x({4, 4, 4}, 1);
  const EntropyField e(x.dims());
  CHECK_THROWS_AS(grow(x, e, {4, 0, 0}, GrowConfig::desk_preset()), Error);
  GrowConfig bad = GrowConfig::desk_preset();
  bad.max_iters = 0;
  CHECK_THROWS_AS(grow(x, e, {0, 0, 0}, bad), Error);
  CHECK_THROWS_AS(grow(x, EntropyField({4, 4, 5}), {0, 0, 0}, GrowConfig::desk_preset()), Error);
}
