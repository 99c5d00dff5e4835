#include <doctest.h>

#include <algorithm>
#include <climits>
#include <cstdlib>

#include "seedgrow/phantom.hpp"

using namespace seedgrow;

namespace {

PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec spec;
  spec.rng_seed = seed;
  return spec;
}

int brute_chebyshev(const Mask& m, const VoxelIndex& v) {
  int best = INT_MAX;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const VoxelIndex u = m.dims().unflat(i);
    best = std::min(best, std::max({std::abs(u.a - v.a), std::abs(u.b - v.b), std::abs(u.c - v.c)}));
  }
  return best == INT_MAX ? -1 : best;
}

}  // namespace

TEST_CASE("same spec gives bit-identical samples") {
  PhantomSpec spec = small_spec(42);
  spec.mimic_count = 1;
  const PhantomSample a = generate(spec);
  const PhantomSample b = generate(spec);
  CHECK(a.volume == b.volume);
  CHECK(a.truth == b.truth);
  CHECK(a.gland == b.gland);
  CHECK(a.mimics == b.mimics);
  CHECK(a.lesion_centres == b.lesion_centres);
  spec.rng_seed = 43;
  CHECK_FALSE(generate(spec).volume == a.volume);
}

TEST_CASE("no lesions gives an empty truth") {
  PhantomSpec spec = small_spec(3);
  spec.lesion_count = 0;
  const PhantomSample s = generate(spec);
  CHECK(count(s.truth) == 0);
  CHECK(s.lesion_centres.empty());
  CHECK(count(s.gland) > 0);
}

TEST_CASE("noiseless lesions are brighter than background on channel 0") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PhantomSpec spec = small_spec(seed);
    spec.noise_std = 0.0;
    spec.heterogeneity = 0.0;
    spec.lesion_contrast = 0.5;
    const PhantomSample s = generate(spec);
    float lesion_min = 1e9f, background_max = -1e9f;
    for (std::size_t i = 0; i < s.truth.size(); ++i) {
      const float v = s.volume.at(0, i);
      if (s.truth[i]) lesion_min = std::min(lesion_min, v);
      else background_max = std::max(background_max, v);
    }
    CHECK(lesion_min - background_max >= 0.4f);
  }
}

TEST_CASE("blobs sit inside the gland and do not overlap") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomSpec spec = small_spec(100 + seed);
    spec.lesion_count = 2;
    spec.mimic_count = 1;
    const PhantomSample s = generate(spec);
    CHECK(s.lesion_centres.size() == 2);
    CHECK(count(s.truth) > 0);
    CHECK(count(s.mimics) > 0);
    for (std::size_t i = 0; i < s.truth.size(); ++i) {
      if (s.truth[i] || s.mimics[i]) CHECK(s.gland[i] == 1);
      CHECK_FALSE((s.truth[i] && s.mimics[i]));
    }
    for (const auto& c : s.lesion_centres) CHECK(s.truth(c) == 1);
    CHECK(s.volume.data().allFinite());
  }
}

TEST_CASE("seed samplers respect their regions over 1000 draws") {
  PhantomSpec spec = small_spec(7);
  const PhantomSample s = generate(spec);
  const auto dist = chebyshev_distance(s.truth);
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const VoxelIndex in = sample_seed_in_lesion(s, k);
    CHECK(s.truth(in) == 1);
    const VoxelIndex out = sample_perturbed_seed(s, 4, k);
    CHECK(s.truth(out) == 0);
    CHECK(dist(out) >= 1);
    CHECK(dist(out) <= 4);
    CHECK(s.gland(sample_seed_in_gland(s, k)) == 1);
  }
  CHECK(sample_seed_in_lesion(s, 5) == sample_seed_in_lesion(s, 5));
  CHECK(s.gland(gland_centre_seed(s)) == 1);
}

TEST_CASE("lesion samplers reject empty truth") {
  PhantomSpec spec = small_spec(8);
  spec.lesion_count = 0;
  const PhantomSample s = generate(spec);
  CHECK_THROWS_AS(sample_seed_in_lesion(s, 1), Error);
  CHECK_THROWS_AS(sample_perturbed_seed(s, 4, 1), Error);
  CHECK_NOTHROW(sample_seed_in_gland(s, 1));
}

TEST_CASE("chebyshev distance matches brute force") {
  Mask m({7, 6, 5});
  m({1, 1, 1}) = 1;
  m({5, 4, 3}) = 1;
  const auto d = chebyshev_distance(m);
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(d[i] == brute_chebyshev(m, m.dims().unflat(i)));
  const auto empty = chebyshev_distance(Mask({3, 3, 3}));
  CHECK((empty.array() == -1).all());
}

TEST_CASE("invalid specs are config errors") {
  PhantomSpec spec;
  spec.channels = 0;
  CHECK_THROWS_AS(generate(spec), Error);
  spec = PhantomSpec{};
  spec.lesion_radius_range = {4.0, 2.0};
  CHECK_THROWS_AS(generate(spec), Error);
  spec = PhantomSpec{};
  spec.noise_std = -1.0;
  CHECK_THROWS_AS(generate(spec), Error);
}
