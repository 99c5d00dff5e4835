#pragma once

#include <cstddef>
#include <vector>

#include "seedgrow/volume.hpp"

namespace seedgrow {

/// Region-growing hyper-parameters. Defaults are the wide-window preset;
/// desk-scale runs use `desk_preset()`.
struct GrowConfig {
  VoxelIndex radius{3, 3, 3};
  double tau_sigma = 0.3;
  double tau_e = 0.1;
  int max_iters = 64;
  ChannelReduction reduction = ChannelReduction::kMax;

  /// Radius (1,1,1) for 32^3 phantoms; thresholds unchanged.
  static GrowConfig desk_preset() {
    GrowConfig cfg;
    cfg.radius = {1, 1, 1};
    return cfg;
  }

  /// Voxel count of the full neighbourhood window, prod(2 r_i + 1).
  std::size_t window_volume() const {
    return static_cast<std::size_t>(2 * radius.a + 1) * static_cast<std::size_t>(2 * radius.b + 1) *
           static_cast<std::size_t>(2 * radius.c + 1);
  }

  void validate() const;
};

struct GrowResult {
  Mask mask;
  int iterations_run = 0;
  bool converged = false;
  std::vector<std::size_t> frontier_history;  // voxels added per iteration
};

/// Static inclusion predicate: sigma_x(v) < tau_sigma and y_e(v) < tau_e.
Mask admissible_set(const Volume& x, const EntropyField& entropy, const GrowConfig& cfg);

/// Iterative seeded region growing. Iteration j examines the window around
/// every voxel added in iteration j-1 and includes each not-yet-included
/// admissible voxel. The seed is included unconditionally.
GrowResult grow(const Volume& x, const EntropyField& entropy, const VoxelIndex& seed, const GrowConfig& cfg);

/// Same as above with the admissible set precomputed.
GrowResult grow(const Mask& admissible, const VoxelIndex& seed, const GrowConfig& cfg);

/// Uncapped breadth-first flood fill over admissible ∪ {seed}.
Mask grow_oracle(const Volume& x, const EntropyField& entropy, const VoxelIndex& seed, const GrowConfig& cfg);
Mask grow_oracle(const Mask& admissible, const VoxelIndex& seed, const VoxelIndex& radius);

}  // namespace seedgrow
