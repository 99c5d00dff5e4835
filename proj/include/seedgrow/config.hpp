#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seedgrow/env.hpp"
#include "seedgrow/metrics.hpp"
#include "seedgrow/phantom.hpp"
#include "seedgrow/policy.hpp"
#include "seedgrow/ppo.hpp"
#include "seedgrow/surrogate.hpp"

namespace seedgrow {

struct DatasetConfig {
  int surrogate_cases = 24;   // lesion phantoms for surrogate training
  int agent_cases = 40;       // lesion phantoms for agent training
  int test_cases = 20;        // lesion phantoms for evaluation
  int negative_cases = 20;    // lesion-free phantoms for evaluation
  double mimic_fraction = 0.5;
  double negative_mimic_fraction = 0.0;  // lesion-free split
};

struct AgentConfig {
  PolicyArch arch;
  PpoConfig ppo;
  StartMode start = StartMode::kInLesion;
  int checkpoint_every = 0;  // updates; 0 disables
};

struct EvalConfig {
  std::vector<Protocol> protocols{Protocol::kInLesion, Protocol::kPerturbed, Protocol::kGlandNegative,
                                  Protocol::kNoPrompt};
  int max_offset = 4;
  int prompts_per_case = 1;
  std::optional<std::size_t> negative_threshold;
  std::vector<double> betas{0.0, 0.4, 0.8};
};

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  int session_ttl_s = 1800;
  std::string static_dir;
};

/// Every tunable of a run. Serialised as a JSON document; unknown keys are
/// rejected, missing keys keep their defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  PhantomSpec phantom;
  DatasetConfig dataset;
  SurrogateArch surrogate_arch;
  SurrogateTrainConfig surrogate_train;
  EnvConfig env;
  AgentConfig agent;
  EvalConfig eval;
  ServeConfig serve;

  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& doc);

/// Parses `text`, applies `key.path=value` overrides (value parsed as JSON,
/// falling back to a string), then validates.
RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Dataset on disk: one directory per split, each sample stored as
/// sample_NNNN.svf with .truth.svm and .gland.svm siblings, plus manifest.json.
inline constexpr const char* kSplits[] = {"surrogate", "agent", "test", "negative"};

std::vector<PhantomSample> generate_split(const RunConfig& cfg, const std::string& split);
void write_split(const std::filesystem::path& root, const std::string& split, std::span<const PhantomSample> samples);
std::vector<PhantomSample> read_split(const std::filesystem::path& root, const std::string& split);
void write_manifest(const std::filesystem::path& root, const RunConfig& cfg);

}  // namespace seedgrow
