#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "seedgrow/region_grow.hpp"
#include "seedgrow/rng.hpp"
#include "seedgrow/surrogate.hpp"
#include "seedgrow/volume.hpp"

namespace seedgrow {

struct EnvConfig {
  double beta = 0.8;  // weight of the mean-entropy exploration bonus
  int horizon = 10;   // T
  GrowConfig grow = GrowConfig::desk_preset();

  void validate() const;
};

/// s_t = (x, y_t). Masks are shared so consecutive states do not copy grids.
struct EnvState {
  std::shared_ptr<const Volume> volume;
  std::shared_ptr<const Mask> mask;
  int step_index = 0;
  bool terminal = false;
};

struct Transition {
  EnvState state;
  VoxelIndex action;
  double reward = 0.0;
  double dice_reward = 0.0;    // L(y_t) - L(y_{t+1})
  double entropy_bonus = 0.0;  // beta * mean entropy over y_{t+1}
  EnvState next_state;
  bool done = false;
  // Filled in by policy-driven rollouts.
  int action_cell = -1;
  double log_prob = 0.0;
  double value = 0.0;
};

struct RewardTerms {
  double dice = 0.0;
  double entropy = 0.0;
  double total = 0.0;
};

/// Mean of `entropy` over voxels set in `mask`; 0 for an empty mask.
double mean_entropy(const Mask& mask, const EntropyField& entropy);

/// R_t = L(y_t, truth) - L(y_{t+1}, truth) + beta * mean entropy over y_{t+1}.
RewardTerms reward_of(const Mask& y_t, const Mask& y_next, const Mask& truth, const EntropyField& entropy, double beta);

/// Action chosen by a policy, with its bookkeeping for PPO.
struct PolicyChoice {
  VoxelIndex action;
  int cell = -1;
  double log_prob = 0.0;
  double value = 0.0;
};

using PolicyFn = std::function<PolicyChoice(const EnvState&, Rng&)>;

/// One case: the image, its cached entropy field and admissible set, and the
/// ground truth when known (training and evaluation only).
class SegmentationEnv {
 public:
  SegmentationEnv(std::shared_ptr<const Volume> volume, EntropyField entropy, std::optional<Mask> truth,
                  EnvConfig cfg);

  /// Entropy computed once from the frozen surrogate.
  static SegmentationEnv from_surrogate(std::shared_ptr<const Volume> volume, const SurrogateParams& surrogate,
                                        std::optional<Mask> truth, EnvConfig cfg);

  /// y_0 = g(x, v_{s,0}).
  EnvState reset(const VoxelIndex& initial_seed) const;

  /// y_{t+1} = g(x, a_t), replacing y_t. Rewards are zero when no truth is held.
  Transition step(const EnvState& state, const VoxelIndex& action) const;

  GrowResult grow_from(const VoxelIndex& seed) const;

  const Volume& volume() const { return *volume_; }
  std::shared_ptr<const Volume> volume_ptr() const { return volume_; }
  const EntropyField& entropy() const { return entropy_; }
  const Mask& admissible() const { return admissible_; }
  const std::optional<Mask>& truth() const { return truth_; }
  const EnvConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const Volume> volume_;
  EntropyField entropy_;
  Mask admissible_;
  std::optional<Mask> truth_;
  EnvConfig cfg_;
};

/// Runs reset then steps the policy until done.
std::vector<Transition> rollout(const SegmentationEnv& env, const VoxelIndex& initial_seed, const PolicyFn& policy,
                                std::uint64_t rng_seed);

/// sum_t gamma^t R_t.
double discounted_return(std::span<const Transition> episode, double gamma);

// Episode log (.epl): JSON header line, then the bit-packed initial mask, then
// one fixed-size record plus the bit-packed next mask per transition.
std::string encode_episode(std::span<const Transition> episode);
std::vector<Transition> decode_episode(std::string_view bytes);
void write_episode(const std::filesystem::path& path, std::span<const Transition> episode);
std::vector<Transition> read_episode(const std::filesystem::path& path);

}  // namespace seedgrow
