#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "seedgrow/env.hpp"
#include "seedgrow/rng.hpp"

namespace seedgrow {

/// Architecture of the actor-critic.
///
/// The state (image channels plus the mask as an extra channel) is
/// average-pooled to a G^3 grid. Every cell sees its own pooled values, the
/// mean over its 3x3x3 cell neighbourhood and the global mean; two shared
/// fully connected LeakyReLU layers map these to a cell embedding. The actor
/// emits one logit per cell, the critic reads the mean embedding through a
/// third hidden layer.
struct PolicyArch {
  int pool_grid = 8;
  int action_grid = 8;
  int channels = 3;  // image channels; the mask adds one more
  int hidden1 = 32;
  int hidden2 = 32;
  int critic_hidden = 32;

  int cell_count() const { return pool_grid * pool_grid * pool_grid; }
  int input_width() const { return 3 * (channels + 1); }
  int param_count() const;
  void validate() const;
  friend bool operator==(const PolicyArch&, const PolicyArch&) = default;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

struct PolicyParams {
  PolicyArch arch;
  Eigen::VectorXd theta;
  AdamState adam;

  static PolicyParams initial(const PolicyArch& arch, std::uint64_t seed);
  void validate() const;
};

/// Per-cell inputs, one row per action cell.
struct EncodedState {
  Eigen::MatrixXd cells;
};

/// Average-pools (x, y_t) and assembles per-cell inputs.
EncodedState encode(const Volume& x, const Mask& mask, const PolicyArch& arch);
EncodedState encode(const EnvState& state, const PolicyArch& arch);

/// Categorical distribution over action cells.
struct ActionDistribution {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  Eigen::VectorXd log_probs;

  static ActionDistribution from_logits(Eigen::VectorXd logits);
  /// Highest probability cell; ties go to the lowest flat index.
  int greedy() const;
  /// Inverse-CDF draw from one uniform variate.
  int sample(Rng& rng) const;
  double entropy() const;
};

struct PolicyOutput {
  ActionDistribution dist;
  double value = 0.0;
};

PolicyOutput evaluate(const PolicyParams& params, const EncodedState& input);

/// Centre voxel of an action cell.
VoxelIndex cell_centre(int cell, const Dims& dims, int action_grid);

enum class ActMode { kSample, kGreedy };

struct ActResult {
  VoxelIndex action;
  int cell = 0;
  double log_prob = 0.0;
  double value = 0.0;
};

ActResult act(const EnvState& state, const PolicyParams& params, Rng& rng, ActMode mode);

/// Adapter for `rollout`.
PolicyFn as_policy_fn(const PolicyParams& params, ActMode mode);

/// One training sample of the PPO objective.
struct PpoSample {
  EncodedState input;
  int cell = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double target_return = 0.0;
};

struct PpoLossConfig {
  double clip_eps = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
};

/// min(r A, clip(r, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double clip_eps);

struct PpoLoss {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

/// Minimised objective: mean of -clipped surrogate + value_coef (V - R)^2 - entropy_coef H.
PpoLoss ppo_loss(const PolicyParams& params, std::span<const PpoSample> batch, const PpoLossConfig& cfg);

/// Analytic gradient of ppo_loss(...).total with respect to params.theta.
Eigen::VectorXd ppo_gradient(const PolicyParams& params, std::span<const PpoSample> batch, const PpoLossConfig& cfg,
                             PpoLoss* loss_out = nullptr);

std::string encode_policy(const PolicyParams& params);
PolicyParams decode_policy(std::string_view bytes);
void save_policy(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace seedgrow
