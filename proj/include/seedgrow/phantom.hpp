#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "seedgrow/volume.hpp"

namespace seedgrow {

/// Parameters of one synthetic phantom.
///
/// Channel k carries a gland level, a different level outside the gland, and a
/// lesion level offset from the gland level by `lesion_contrast` times a
/// per-channel gain (+1.0, +0.4, -0.8, repeating). Healthy tissue carries a
/// voxel-scale checkerboard on channel 1, `gland_texture` inside the gland and
/// `outside_texture` beyond it, so it is locally heterogeneous while lesions
/// are homogeneous. Mimics are benign blobs at lesion intensity with their own
/// checkerboard (`mimic_texture`). They are not part of the truth.
struct PhantomSpec {
  Dims dims{32, 32, 32};
  int channels = 3;
  int lesion_count = 1;
  std::pair<double, double> lesion_radius_range{2.5, 4.0};
  double lesion_contrast = 0.5;
  double heterogeneity = 0.02;
  double noise_std = 0.02;
  double gland_texture = 0.34;
  double outside_texture = 0.34;
  int mimic_count = 0;
  double mimic_texture = 0.12;
  Spacing spacing{1.0, 1.0, 1.0};
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct PhantomSample {
  Volume volume;
  Mask truth;
  std::vector<VoxelIndex> lesion_centres;
  Mask gland;
  Mask mimics;
};

/// Deterministic in `spec` (including rng_seed) on every platform.
PhantomSample generate(const PhantomSpec& spec);

/// Uniform voxel of the truth mask.
VoxelIndex sample_seed_in_lesion(const PhantomSample& sample, std::uint64_t rng_seed);

/// Uniform voxel outside the lesions whose Chebyshev distance to the nearest
/// lesion voxel lies in [1, max_offset_vox].
VoxelIndex sample_perturbed_seed(const PhantomSample& sample, int max_offset_vox, std::uint64_t rng_seed);

/// Uniform voxel of the gland mask.
VoxelIndex sample_seed_in_gland(const PhantomSample& sample, std::uint64_t rng_seed);

/// Gland voxel nearest the gland centroid (the prompt-free heuristic seed).
VoxelIndex gland_centre_seed(const PhantomSample& sample);

/// Chebyshev distance from every voxel to the nearest set voxel of `m`
/// (0 on the mask, -1 everywhere when `m` is empty).
Field<int, ScalarTag> chebyshev_distance(const Mask& m);

}  // namespace seedgrow
