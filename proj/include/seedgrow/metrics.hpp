#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seedgrow/inference.hpp"
#include "seedgrow/ppo.hpp"
#include "seedgrow/region_grow.hpp"

namespace seedgrow {

/// 1 - dice_loss on binary masks.
double dice_score(const Mask& pred, const Mask& truth);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

Confusion confusion(const Mask& pred, const Mask& truth);

struct Rates {
  double fpr = 0.0;
  std::optional<double> sensitivity;  // undefined when the truth is empty
};

Rates fpr_sensitivity(const Mask& pred, const Mask& truth);

/// Negative iff |final| <= threshold; the default threshold is the grow
/// window volume prod(2 r_i + 1).
bool classify_negative(const Mask& final_mask, const GrowConfig& cfg,
                       std::optional<std::size_t> threshold = std::nullopt);

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p_two_sided = 1.0;
  double mean_difference = 0.0;
};

/// Paired t-test on a - b.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

enum class Protocol { kInLesion, kPerturbed, kGlandNegative, kNoPrompt };

std::string to_string(Protocol p);
Protocol protocol_from(const std::string& name);

struct EvalOptions {
  Protocol protocol = Protocol::kInLesion;
  int max_offset = 4;         // perturbed protocol, Chebyshev voxels
  int prompts_per_case = 1;
  std::uint64_t rng_seed = 0;
  std::optional<std::size_t> negative_threshold;
};

struct EvalRow {
  std::size_t case_index = 0;
  std::string protocol;
  VoxelIndex prompt;
  int seed_offset = 0;  // Chebyshev distance from the prompt to the truth, -1 without truth
  bool truth_empty = false;
  double dice = 0.0;
  double fpr = 0.0;
  std::optional<double> sensitivity;
  std::size_t voxels = 0;
  int steps = 0;
  bool predicted_negative = false;
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n = 0;
};

Aggregate aggregate(std::span<const double> values);

struct EvalReport {
  std::string method;
  std::vector<EvalRow> rows;
  Aggregate dice, fpr, sensitivity;
  // Case-level negative classification against truth emptiness.
  std::size_t true_negative = 0, false_negative = 0, true_positive = 0, false_positive = 0;

  /// Recomputes the aggregates from the rows.
  void finalise();
  std::vector<double> dice_values() const;
};

/// Full inference per case. A null policy evaluates single-shot growing from
/// the same prompts. Deterministic in options.rng_seed.
EvalReport eval_suite(std::span<const Case> cases, std::shared_ptr<const PolicyParams> policy, const EnvConfig& env,
                      const EvalOptions& options);

struct AblationVariant {
  std::string name;
  std::shared_ptr<const PolicyParams> policy;
  std::span<const Case> cases;
  EnvConfig env;
  EvalOptions options;
};

struct AblationRow {
  std::string name;
  EvalReport report;
};

std::vector<AblationRow> ablation_sweep(std::span<const AblationVariant> variants);

/// Per-case standard deviation of Dice over `n_prompts` in-lesion prompts.
std::vector<double> prompt_variability(std::span<const Case> cases, std::shared_ptr<const PolicyParams> policy,
                                       const EnvConfig& env, int n_prompts, std::uint64_t rng_seed);

std::string report_json(std::span<const AblationRow> rows);
std::string report_markdown(std::span<const AblationRow> rows);
void write_reports(const std::filesystem::path& dir, std::span<const AblationRow> rows);

}  // namespace seedgrow
