#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <json.hpp>

#include "seedgrow/env.hpp"
#include "seedgrow/policy.hpp"

namespace seedgrow {

/// One entry of a session timeline. Step 0 is the user prompt; later steps are
/// agent re-seeds. `added`/`removed` are relative to the previous mask.
struct StepRecord {
  int step = 0;
  VoxelIndex seed;
  int cell = -1;  // action cell, -1 for the prompt
  std::size_t added = 0;
  std::size_t removed = 0;
  std::size_t voxels = 0;
  bool converged = false;  // mask unchanged by this step
  bool terminal = false;   // no further refinement will change the mask
  std::optional<double> dice;  // when the truth is known
};

nlohmann::ordered_json to_json(const StepRecord& r);

/// Prompt-then-refine engine shared by the CLI and the HTTP service.
///
/// Refinement is greedy and therefore deterministic. The mask is replaced at
/// every step. Refining a terminal session appends a zero-diff record.
class PromptSession {
 public:
  PromptSession(std::shared_ptr<const SegmentationEnv> env, std::shared_ptr<const PolicyParams> policy);

  const StepRecord& prompt(const VoxelIndex& seed);
  /// Up to `n` agent steps; stops early once terminal.
  std::vector<StepRecord> refine(int n);
  /// Runs to stabilisation or the horizon.
  std::vector<StepRecord> refine_auto();
  /// Drops the mask and the timeline; keeps the volume.
  void reset();

  bool has_prompt() const { return state_.has_value(); }
  bool terminal() const { return has_prompt() && state_->terminal; }
  const Mask& mask() const;
  const std::vector<StepRecord>& history() const { return history_; }
  const SegmentationEnv& env() const { return *env_; }
  /// Negative iff the mask does not exceed the grow window volume.
  bool negative() const;

 private:
  StepRecord refine_once();

  std::shared_ptr<const SegmentationEnv> env_;
  std::shared_ptr<const PolicyParams> policy_;
  std::optional<EnvState> state_;
  std::vector<StepRecord> history_;
};

struct InferenceResult {
  Mask mask;
  std::vector<StepRecord> trace;
  std::vector<Mask> step_masks;  // mask after each record
};

/// Prompt followed by auto refinement. A null policy gives single-shot growing.
InferenceResult infer(std::shared_ptr<const SegmentationEnv> env, std::shared_ptr<const PolicyParams> policy,
                      const VoxelIndex& prompt);

}  // namespace seedgrow
