#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "seedgrow/config.hpp"
#include "seedgrow/metrics.hpp"

namespace seedgrow {

/// Trains the surrogate on the "surrogate" split described by `cfg`.
SurrogateParams train_surrogate(std::span<const PhantomSample> samples, const RunConfig& cfg,
                                std::span<const int> channels = {});

/// One agent run as configured, with an optional per-update callback.
PolicyParams train_policy(std::span<const Case> cases, const RunConfig& cfg, const TrainCallback& on_update = {});

struct AblationInputs {
  std::span<const PhantomSample> surrogate_samples;  // only used for the single-channel variant
  std::span<const PhantomSample> agent_samples;
  std::span<const PhantomSample> test_samples;
  std::span<const PhantomSample> negative_samples;
  const SurrogateParams* surrogate = nullptr;
  std::shared_ptr<const PolicyParams> full_policy;  // reused when set
  bool single_channel = true;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::map<std::string, std::shared_ptr<const PolicyParams>> policies;

  const EvalReport& report(const std::string& name) const;
};

/// Trains and evaluates the variants: full method, no entropy reward,
/// no prompting, single channel, the beta sweep, single-shot growing, plus
/// perturbed-prompt and lesion-free protocols for the full method.
AblationResult run_ablation(const RunConfig& cfg, const AblationInputs& in,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace seedgrow
