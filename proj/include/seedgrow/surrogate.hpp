#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seedgrow/volume.hpp"

namespace seedgrow {

enum class FeatureSet {
  kRaw,   // channel intensities only
  kFull,  // raw, local mean/std at radius 1 and 2, gradient magnitude, position
};

/// Architecture descriptor of the voxel-wise surrogate. `hidden == 0` gives a
/// logistic-regression model; otherwise one tanh hidden layer.
struct SurrogateArch {
  FeatureSet features = FeatureSet::kFull;
  int channels = 3;
  int hidden = 8;

  int feature_count() const;
  int param_count() const;
  friend bool operator==(const SurrogateArch&, const SurrogateArch&) = default;
};

struct SurrogateMeta {
  int epochs_run = 0;
  double final_loss = 0.0;
  std::vector<double> loss_history;  // full-dataset mean Dice loss after each epoch
};

struct SurrogateParams {
  SurrogateArch arch;
  Eigen::VectorXd theta;
  SurrogateMeta meta;

  static SurrogateParams zeros(const SurrogateArch& arch);
  /// Zero biases, weights uniform in ±1/sqrt(fan_in) from the project PRNG.
  static SurrogateParams initial(const SurrogateArch& arch, std::uint64_t seed);

  void validate() const;
};

/// Per-voxel feature planes, one row per voxel (flat order), one column per feature.
struct FeatureStack {
  Dims dims;
  Eigen::MatrixXd planes;
};

FeatureStack featurize(const Volume& x, FeatureSet set = FeatureSet::kFull);

ProbabilityField predict(const FeatureStack& features, const SurrogateParams& params);
ProbabilityField predict(const Volume& x, const SurrogateParams& params);

EntropyField entropy_of(const Volume& x, const SurrogateParams& params);

struct SurrogateExample {
  FeatureStack features;
  Mask truth;
};

/// Mean soft-Dice loss over the batch.
double batch_loss(const SurrogateParams& params, std::span<const SurrogateExample> batch);

/// Analytic gradient of batch_loss with respect to params.theta.
Eigen::VectorXd gradient(const SurrogateParams& params, std::span<const SurrogateExample> batch);

struct SurrogateTrainConfig {
  double learning_rate = 3e-2;
  double final_learning_rate = 1e-4;  // cosine annealing target
  int epochs = 60;
  int batch_size = 4;  // volumes per step
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Adam on the mean soft-Dice loss with cosine-annealed step size. The
/// returned parameters are rounded to float so that a saved and reloaded
/// model behaves identically.
SurrogateParams train(std::span<const SurrogateExample> dataset, const SurrogateArch& arch,
                      const SurrogateTrainConfig& cfg);

std::vector<SurrogateExample> make_examples(std::span<const Volume> volumes, std::span<const Mask> truths,
                                            FeatureSet set);

void save_surrogate(const std::filesystem::path& path, const SurrogateParams& params);
SurrogateParams load_surrogate(const std::filesystem::path& path);
std::string encode_surrogate(const SurrogateParams& params);
SurrogateParams decode_surrogate(std::string_view bytes);

}  // namespace seedgrow
