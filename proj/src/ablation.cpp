#include "seedgrow/ablation.hpp"

#include <cstdio>

namespace seedgrow {

SurrogateParams train_surrogate(std::span<const PhantomSample> samples, const RunConfig& cfg,
                                std::span<const int> channels) {
  std::vector<Volume> volumes;
  std::vector<Mask> truths;
  for (const auto& s : samples) {
    volumes.push_back(channels.empty() ? s.volume : s.volume.select_channels(channels));
    truths.push_back(s.truth);
  }
  SurrogateArch arch = cfg.surrogate_arch;
  if (!channels.empty()) arch.channels = static_cast<int>(channels.size());
  SurrogateTrainConfig tc = cfg.surrogate_train;
  tc.rng_seed = derive_seed(cfg.seed, 21);
  return train(make_examples(volumes, truths, arch.features), arch, tc);
}

PolicyParams train_policy(std::span<const Case> cases, const RunConfig& cfg, const TrainCallback& on_update) {
  AgentTrainConfig tc;
  tc.ppo = cfg.agent.ppo;
  tc.env = cfg.env;
  tc.start = cfg.agent.start;
  tc.rng_seed = derive_seed(cfg.seed, 31);
  PolicyArch arch = cfg.agent.arch;
  if (!cases.empty()) arch.channels = cases.front().volume->channels();
  return train_agent(cases, arch, tc, on_update);
}

const EvalReport& AblationResult::report(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r.report;
  fail(ErrorKind::kData, "no ablation row named '" + name + "'", "name");
}

namespace {

std::string beta_name(double beta) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "beta=%.2g", beta);
  return buf;
}

}  // namespace

AblationResult run_ablation(const RunConfig& cfg, const AblationInputs& in,
                            const std::function<void(const std::string&)>& progress) {
  if (!in.surrogate) fail(ErrorKind::kConfig, "ablation needs a surrogate", "surrogate");
  auto note = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const auto agent_cases = make_cases(in.agent_samples, *in.surrogate);
  const auto test_cases = make_cases(in.test_samples, *in.surrogate);
  const auto negative_cases = make_cases(in.negative_samples, *in.surrogate);

  EvalOptions base;
  base.max_offset = cfg.eval.max_offset;
  base.prompts_per_case = cfg.eval.prompts_per_case;
  base.rng_seed = derive_seed(cfg.seed, 41);
  base.negative_threshold = cfg.eval.negative_threshold;
  auto with = [&](Protocol p) {
    EvalOptions o = base;
    o.protocol = p;
    return o;
  };

  AblationResult out;
  auto train_variant = [&](const std::string& name, const RunConfig& vc, std::span<const Case> cases) {
    note("training " + name);
    auto p = std::make_shared<const PolicyParams>(train_policy(cases, vc));
    out.policies[name] = p;
    return p;
  };

  std::shared_ptr<const PolicyParams> full = in.full_policy;
  if (full) out.policies["full"] = full;
  else full = train_variant("full", cfg, agent_cases);

  std::vector<AblationVariant> variants;
  variants.push_back({"full", full, test_cases, cfg.env, with(Protocol::kInLesion)});

  RunConfig no_entropy = cfg;
  no_entropy.env.beta = 0.0;
  const auto p_no_entropy = cfg.env.beta == 0.0 ? full : train_variant("no-entropy-reward", no_entropy, agent_cases);
  variants.push_back({"no-entropy-reward", p_no_entropy, test_cases, no_entropy.env, with(Protocol::kInLesion)});

  RunConfig no_prompt = cfg;
  no_prompt.agent.start = StartMode::kGlandCentre;
  const auto p_no_prompt = train_variant("no-prompt", no_prompt, agent_cases);
  variants.push_back({"no-prompt", p_no_prompt, test_cases, cfg.env, with(Protocol::kNoPrompt)});

  for (double beta : cfg.eval.betas) {
    std::shared_ptr<const PolicyParams> p;
    if (beta == cfg.env.beta) p = full;
    else if (beta == 0.0) p = p_no_entropy;
    else {
      RunConfig vc = cfg;
      vc.env.beta = beta;
      p = train_variant(beta_name(beta), vc, agent_cases);
    }
    EnvConfig env = cfg.env;
    env.beta = beta;
    variants.push_back({beta_name(beta), p, test_cases, env, with(Protocol::kInLesion)});
  }

  std::vector<Case> single_train, single_test;
  if (in.single_channel) {
    note("training single-channel surrogate");
    const int channel0[] = {0};
    const SurrogateParams s1 = train_surrogate(in.surrogate_samples, cfg, channel0);
    single_train = make_cases(in.agent_samples, s1, channel0);
    single_test = make_cases(in.test_samples, s1, channel0);
    RunConfig vc = cfg;
    vc.agent.arch.channels = 1;
    const auto p = train_variant("single-channel", vc, single_train);
    variants.push_back({"single-channel", p, single_test, cfg.env, with(Protocol::kInLesion)});
  }

  variants.push_back({"single-shot", nullptr, test_cases, cfg.env, with(Protocol::kInLesion)});
  variants.push_back({"full/perturbed", full, test_cases, cfg.env, with(Protocol::kPerturbed)});
  variants.push_back({"single-shot/perturbed", nullptr, test_cases, cfg.env, with(Protocol::kPerturbed)});
  variants.push_back({"full/no-prompt", full, test_cases, cfg.env, with(Protocol::kNoPrompt)});
  if (!negative_cases.empty()) {
    variants.push_back({"full/gland-negative", full, negative_cases, cfg.env, with(Protocol::kGlandNegative)});
    variants.push_back({"single-shot/gland-negative", nullptr, negative_cases, cfg.env, with(Protocol::kGlandNegative)});
  }
  note("evaluating");
  out.rows = ablation_sweep(variants);
  return out;
}

}  // namespace seedgrow
