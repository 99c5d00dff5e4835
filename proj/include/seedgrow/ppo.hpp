#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seedgrow/env.hpp"
#include "seedgrow/phantom.hpp"
#include "seedgrow/policy.hpp"
#include "seedgrow/surrogate.hpp"

namespace seedgrow {

struct PpoConfig {
  double learning_rate = 1e-3;
  double gamma = 0.99;
  double clip_eps = 0.2;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int batch_size = 128;        // transitions collected per update
  long total_steps = 20000;    // environment transitions over the whole run
  int updates_per_batch = 4;   // optimisation epochs over each batch
  int minibatch_size = 32;
  double max_grad_norm = 0.5;  // <= 0 disables clipping
  bool normalize_advantages = true;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  PpoLossConfig loss() const { return {clip_eps, value_coef, entropy_coef}; }
  void validate() const;
};

/// Generalised advantage estimates for one episode. `values[t]` is V(s_t);
/// `bootstrap` is V(s_T) after the last reward (0 for a terminal end).
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                        double gamma, double lambda);

struct UpdateStats {
  PpoLoss loss;  // averaged over minibatches of the last epoch
  double grad_norm = 0.0;
  std::size_t samples = 0;
};

/// One PPO update on a buffer of complete episodes collected with `params`.
PolicyParams ppo_update(const PolicyParams& params, std::span<const std::vector<Transition>> episodes,
                        const PpoConfig& cfg, std::uint64_t rng_seed, UpdateStats* stats = nullptr);

/// Where each training episode starts.
enum class StartMode {
  kInLesion,     // uniform lesion voxel; gland voxel for lesion-free cases
  kGlandCentre,  // prompt-free heuristic seed
};

/// A training or evaluation case with its entropy field precomputed.
struct Case {
  std::shared_ptr<const Volume> volume;
  EntropyField entropy;
  Mask truth;
  const PhantomSample* sample = nullptr;
};

/// Computes the frozen surrogate's entropy for every sample once.
std::vector<Case> make_cases(std::span<const PhantomSample> samples, const SurrogateParams& surrogate);

/// Same, restricted to the listed channels (the single-sequence ablation).
std::vector<Case> make_cases(std::span<const PhantomSample> samples, const SurrogateParams& surrogate,
                             std::span<const int> channels);

struct AgentTrainConfig {
  PpoConfig ppo;
  EnvConfig env;
  StartMode start = StartMode::kInLesion;
  std::uint64_t rng_seed = 0;
};

struct TrainLogRecord {
  int update = 0;
  long steps = 0;
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double mean_final_dice = 0.0;
  UpdateStats stats;
};

using TrainCallback = std::function<void(const TrainLogRecord&, const PolicyParams&)>;

/// PPO outer loop: sample a case, seed it, roll out with the sampling policy,
/// buffer the transitions, update. Deterministic in cfg.rng_seed. Returned
/// parameters are rounded to float.
PolicyParams train_agent(std::span<const Case> cases, const PolicyArch& arch, const AgentTrainConfig& cfg,
                         const TrainCallback& on_update = {});

/// Initial seed for an episode under the given start mode.
VoxelIndex start_seed(const PhantomSample& sample, StartMode mode, std::uint64_t rng_seed);

}  // namespace seedgrow
