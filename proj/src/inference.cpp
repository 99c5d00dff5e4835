#include "seedgrow/inference.hpp"

#include "seedgrow/metrics.hpp"

namespace seedgrow {

namespace {

std::optional<double> dice_if_known(const SegmentationEnv& env, const Mask& m) {
  if (!env.truth()) return std::nullopt;
  return dice_score(m, *env.truth());
}

}  // namespace

nlohmann::ordered_json to_json(const StepRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["seed"] = {r.seed.a, r.seed.b, r.seed.c};
  j["cell"] = r.cell;
  j["added"] = r.added;
  j["removed"] = r.removed;
  j["voxels"] = r.voxels;
  j["converged"] = r.converged;
  j["terminal"] = r.terminal;
  j["dice"] = r.dice ? nlohmann::ordered_json(*r.dice) : nlohmann::ordered_json(nullptr);
  return j;
}

PromptSession::PromptSession(std::shared_ptr<const SegmentationEnv> env, std::shared_ptr<const PolicyParams> policy)
    : env_(std::move(env)), policy_(std::move(policy)) {
  if (!env_) fail(ErrorKind::kConfig, "session needs an environment", "volume_id");
  if (policy_) {
    policy_->validate();
    if (policy_->arch.channels != env_->volume().channels())
      fail(ErrorKind::kData, "policy expects " + std::to_string(policy_->arch.channels) + " channels, volume has " +
                                 std::to_string(env_->volume().channels()), "channels");
  }
}

const StepRecord& PromptSession::prompt(const VoxelIndex& seed) {
  if (!env_->volume().dims().contains(seed))
    fail(ErrorKind::kData, "prompt " + to_string(seed) + " outside grid " + to_string(env_->volume().dims()), "prompt");
  history_.clear();
  state_ = env_->reset(seed);
  StepRecord rec;
  rec.seed = seed;
  rec.voxels = count(*state_->mask);
  rec.added = rec.voxels;
  rec.dice = dice_if_known(*env_, *state_->mask);
  rec.terminal = state_->terminal;
  history_.push_back(rec);
  return history_.back();
}

StepRecord PromptSession::refine_once() {
  StepRecord rec;
  rec.step = static_cast<int>(history_.size());
  if (state_->terminal) {
    const StepRecord& last = history_.back();
    rec.seed = last.seed;
    rec.cell = last.cell;
    rec.voxels = last.voxels;
    rec.converged = last.converged;
    rec.terminal = true;
    rec.dice = last.dice;
    return rec;
  }
  Rng unused(0);
  const ActResult a = act(*state_, *policy_, unused, ActMode::kGreedy);
  const Transition tr = env_->step(*state_, a.action);
  const auto& before = tr.state.mask->array();
  const auto& after = tr.next_state.mask->array();
  rec.seed = a.action;
  rec.cell = a.cell;
  rec.added = static_cast<std::size_t>(((after != 0) && (before == 0)).count());
  rec.removed = static_cast<std::size_t>(((after == 0) && (before != 0)).count());
  rec.voxels = count(*tr.next_state.mask);
  rec.converged = rec.added == 0 && rec.removed == 0;
  rec.terminal = tr.done;
  rec.dice = dice_if_known(*env_, *tr.next_state.mask);
  state_ = tr.next_state;
  return rec;
}

std::vector<StepRecord> PromptSession::refine(int n) {
  if (!has_prompt()) fail(ErrorKind::kConfig, "refine needs a prompt first", "prompt");
  if (!policy_) fail(ErrorKind::kConfig, "session has no policy", "policy_id");
  if (n < 1) fail(ErrorKind::kConfig, "steps must be >= 1", "steps");
  std::vector<StepRecord> out;
  for (int i = 0; i < n; ++i) {
    const bool was_terminal = state_->terminal;
    out.push_back(refine_once());
    history_.push_back(out.back());
    if (was_terminal || state_->terminal) break;
  }
  return out;
}

std::vector<StepRecord> PromptSession::refine_auto() { return refine(env_->config().horizon); }

void PromptSession::reset() {
  state_.reset();
  history_.clear();
}

const Mask& PromptSession::mask() const {
  if (!state_) fail(ErrorKind::kConfig, "session has no mask yet", "prompt");
  return *state_->mask;
}

bool PromptSession::negative() const { return classify_negative(mask(), env_->config().grow); }

InferenceResult infer(std::shared_ptr<const SegmentationEnv> env, std::shared_ptr<const PolicyParams> policy,
                      const VoxelIndex& prompt) {
  const bool single_shot = !policy;
  PromptSession session(std::move(env), std::move(policy));
  InferenceResult out;
  session.prompt(prompt);
  out.step_masks.push_back(session.mask());
  if (!single_shot && !session.terminal()) {
    for (int i = 0; i < session.env().config().horizon && !session.terminal(); ++i) {
      session.refine(1);
      out.step_masks.push_back(session.mask());
    }
  }
  out.trace = session.history();
  out.mask = session.mask();
  return out;
}

}  // namespace seedgrow
