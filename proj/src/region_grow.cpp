#include "seedgrow/region_grow.hpp"

#include <cmath>
#include <deque>
#include <numbers>

namespace seedgrow {

void GrowConfig::validate() const {
  if (!(tau_sigma > 0.0)) fail(ErrorKind::kConfig, "tau_sigma must be positive", "grow.tau_sigma");
  if (!(tau_e > 0.0) || tau_e > std::numbers::ln2) fail(ErrorKind::kConfig, "tau_e must lie in (0, ln 2]", "grow.tau_e");
  if (radius.a < 1 || radius.b < 1 || radius.c < 1) fail(ErrorKind::kConfig, "radius components must be >= 1", "grow.radius");
  if (max_iters < 1) fail(ErrorKind::kConfig, "max_iters must be >= 1", "grow.max_iters");
}

Mask admissible_set(const Volume& x, const EntropyField& entropy, const GrowConfig& cfg) {
  require_same_dims(x.dims(), entropy.dims(), "admissible_set");
  const ScalarField sigma = neighbourhood_std_map(x, cfg.radius, cfg.reduction);
  Mask gate(x.dims());
  gate.array() = ((sigma.array() < cfg.tau_sigma) && (entropy.array() < cfg.tau_e)).cast<std::uint8_t>();
  return gate;
}

namespace {

void check_seed(const Dims& dims, const VoxelIndex& seed) {
  if (!dims.contains(seed))
    fail(ErrorKind::kData, "seed " + to_string(seed) + " outside grid " + to_string(dims), "seed");
}

template <typename Visit>
void for_each_in_window(const Dims& dims, const VoxelIndex& v, const VoxelIndex& radius, Visit&& visit) {
  const Window w = Window::clipped(dims, v, radius);
  for (int a = w.a0; a < w.a1; ++a)
    for (int b = w.b0; b < w.b1; ++b) {
      const std::size_t row = dims.flat({a, b, 0});
      for (int c = w.c0; c < w.c1; ++c) visit(row + static_cast<std::size_t>(c));
    }
}

}  // namespace

GrowResult grow(const Mask& admissible, const VoxelIndex& seed, const GrowConfig& cfg) {
  cfg.validate();
  const Dims& dims = admissible.dims();
  check_seed(dims, seed);

  GrowResult result;
  result.mask = Mask(dims);
  std::vector<std::size_t> frontier{dims.flat(seed)};
  result.mask[frontier.front()] = 1;

  std::vector<std::size_t> added;
  while (result.iterations_run < cfg.max_iters) {
    ++result.iterations_run;
    added.clear();
    for (std::size_t centre : frontier) {
      for_each_in_window(dims, dims.unflat(centre), cfg.radius, [&](std::size_t v) {
        if (!result.mask[v] && admissible[v]) {
          result.mask[v] = 1;
          added.push_back(v);
        }
      });
    }
    result.frontier_history.push_back(added.size());
    if (added.empty()) {
      result.converged = true;
      break;
    }
    frontier.swap(added);
  }
  return result;
}

GrowResult grow(const Volume& x, const EntropyField& entropy, const VoxelIndex& seed, const GrowConfig& cfg) {
  cfg.validate();
  check_seed(x.dims(), seed);
  return grow(admissible_set(x, entropy, cfg), seed, cfg);
}

Mask grow_oracle(const Mask& admissible, const VoxelIndex& seed, const VoxelIndex& radius) {
  const Dims& dims = admissible.dims();
  check_seed(dims, seed);
  Mask out(dims);
  std::deque<std::size_t> queue{dims.flat(seed)};
  out[queue.front()] = 1;
  while (!queue.empty()) {
    const std::size_t v = queue.front();
    queue.pop_front();
    for_each_in_window(dims, dims.unflat(v), radius, [&](std::size_t n) {
      if (!out[n] && admissible[n]) {
        out[n] = 1;
        queue.push_back(n);
      }
    });
  }
  return out;
}

Mask grow_oracle(const Volume& x, const EntropyField& entropy, const VoxelIndex& seed, const GrowConfig& cfg) {
  check_seed(x.dims(), seed);
  return grow_oracle(admissible_set(x, entropy, cfg), seed, cfg.radius);
}

}  // namespace seedgrow
