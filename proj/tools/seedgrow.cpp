// seedgrow: data generation, training, inference, evaluation and serving.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "seedgrow/ablation.hpp"
#include "seedgrow/config.hpp"
#include "seedgrow/inference.hpp"
#include "seedgrow/metrics.hpp"
#include "seedgrow/service.hpp"
#include "seedgrow/volume_io.hpp"

// resolv.h defines _res, which collides with Eigen internals.
#include <httplib.h>

namespace fs = std::filesystem;
using namespace seedgrow;
using nlohmann::ordered_json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;

  RunConfig load() const {
    std::vector<std::string> all = overrides;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    if (threads) all.push_back("threads=" + std::to_string(*threads));
    return config.empty() ? parse_run_config("", all) : load_run_config(config, all);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Run configuration (JSON)");
  cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set env.beta=0.4");
  cmd->add_option("--seed", c.seed, "Base random seed");
  cmd->add_option("--threads", c.threads, "Worker cap")->check(CLI::PositiveNumber);
}

VoxelIndex parse_prompt(const std::string& s) {
  VoxelIndex v;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%d,%d,%d%c", &v.a, &v.b, &v.c, &tail) != 3)
    fail(ErrorKind::kConfig, "prompt must look like a,b,c", "prompt");
  return v;
}

void print_json(const ordered_json& j) { std::cout << j.dump() << std::endl; }

ordered_json rates_json(const Mask& pred, const Mask& truth) {
  const Rates r = fpr_sensitivity(pred, truth);
  return {{"dice", dice_score(pred, truth)},
          {"fpr", r.fpr},
          {"sensitivity", r.sensitivity ? ordered_json(*r.sensitivity) : ordered_json(nullptr)}};
}

int cmd_generate(const Common& c, const std::string& out) {
  const RunConfig cfg = c.load();
  ordered_json counts;
  for (const char* split : kSplits) {
    const auto samples = generate_split(cfg, split);
    write_split(out, split, samples);
    counts[split] = samples.size();
  }
  write_manifest(out, cfg);
  write_file(fs::path(out) / "config.json", to_json(cfg).dump(2) + "\n");
  print_json({{"dataset", out}, {"splits", counts}});
  return 0;
}

int cmd_train_surrogate(const Common& c, const std::string& data, const std::string& out) {
  const RunConfig cfg = c.load();
  const auto samples = read_split(data, "surrogate");
  const SurrogateParams p = train_surrogate(samples, cfg);
  save_surrogate(out, p);
  print_json({{"surrogate", out}, {"epochs", p.meta.epochs_run}, {"final_loss", p.meta.final_loss}});
  return 0;
}

int cmd_train_agent(const Common& c, const std::string& data, const std::string& surrogate_path,
                    const std::string& out, std::string log_path, const std::string& checkpoint_dir) {
  const RunConfig cfg = c.load();
  const auto samples = read_split(data, "agent");
  const SurrogateParams surrogate = load_surrogate(surrogate_path);
  const auto cases = make_cases(samples, surrogate);
  if (log_path.empty()) log_path = (fs::path(out).parent_path() / "train_log.jsonl").string();
  if (!fs::path(log_path).parent_path().empty()) fs::create_directories(fs::path(log_path).parent_path());
  std::ofstream log(log_path, std::ios::binary | std::ios::trunc);
  if (!log) fail(ErrorKind::kConfig, "cannot open log file " + log_path, "log");
  const int every = cfg.agent.checkpoint_every;
  const PolicyParams p = train_policy(cases, cfg, [&](const TrainLogRecord& r, const PolicyParams& params) {
    ordered_json j{{"update", r.update},
                   {"step", r.steps},
                   {"episodes", r.episodes},
                   {"mean_return", r.mean_return},
                   {"mean_final_dice", r.mean_final_dice},
                   {"loss",
                    {{"total", r.stats.loss.total},
                     {"policy", r.stats.loss.policy},
                     {"value", r.stats.loss.value},
                     {"entropy", r.stats.loss.entropy},
                     {"clip_fraction", r.stats.loss.clip_fraction}}},
                   {"grad_norm", r.stats.grad_norm}};
    log << j.dump() << '\n';
    if (every > 0 && !checkpoint_dir.empty() && r.update % every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "policy_update_%05d.ppm", r.update);
      save_policy(fs::path(checkpoint_dir) / name, params);
    }
  });
  save_policy(out, p);
  print_json({{"policy", out}, {"log", log_path}, {"steps", cfg.agent.ppo.total_steps}});
  return 0;
}

int cmd_infer(const Common& c, const std::string& volume_path, const std::string& prompt,
              const std::string& surrogate_path, const std::string& policy_path, const std::string& out,
              const std::string& truth_path, const std::string& trace_dir) {
  const RunConfig cfg = c.load();
  auto vol = std::make_shared<const Volume>(read_volume(volume_path));
  const SurrogateParams surrogate = load_surrogate(surrogate_path);
  std::optional<Mask> truth;
  if (!truth_path.empty()) truth = read_mask(truth_path);
  auto env = std::make_shared<const SegmentationEnv>(SegmentationEnv::from_surrogate(vol, surrogate, truth, cfg.env));
  std::shared_ptr<const PolicyParams> policy;
  if (!policy_path.empty()) policy = std::make_shared<const PolicyParams>(load_policy(policy_path));
  const InferenceResult res = infer(env, policy, parse_prompt(prompt));
  if (!out.empty()) write_mask(out, res.mask, vol->spacing());
  ordered_json trace = ordered_json::array();
  for (const auto& r : res.trace) trace.push_back(to_json(r));
  if (!trace_dir.empty()) {
    for (std::size_t i = 0; i < res.step_masks.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%02zu.svm", i);
      write_mask(fs::path(trace_dir) / name, res.step_masks[i], vol->spacing());
    }
    write_file(fs::path(trace_dir) / "trace.json", trace.dump(2) + "\n");
  }
  ordered_json summary{{"mask", out.empty() ? ordered_json(nullptr) : ordered_json(out)},
                       {"voxels", count(res.mask)},
                       {"negative", classify_negative(res.mask, cfg.env.grow, cfg.eval.negative_threshold)},
                       {"steps", res.trace.size() - 1},
                       {"trace", trace}};
  if (truth) summary["metrics"] = rates_json(res.mask, *truth);
  print_json(summary);
  return 0;
}

int cmd_grow(const Common& c, const std::string& volume_path, const std::string& prompt,
             const std::string& surrogate_path, const std::string& out) {
  const RunConfig cfg = c.load();
  const Volume vol = read_volume(volume_path);
  const EntropyField entropy = entropy_of(vol, load_surrogate(surrogate_path));
  const GrowResult r = grow(vol, entropy, parse_prompt(prompt), cfg.env.grow);
  if (!out.empty()) write_mask(out, r.mask, vol.spacing());
  print_json({{"mask", out.empty() ? ordered_json(nullptr) : ordered_json(out)},
              {"voxels", count(r.mask)},
              {"iterations", r.iterations_run},
              {"converged", r.converged},
              {"frontier", r.frontier_history}});
  return 0;
}

int cmd_eval(const Common& c, const std::string& data, const std::string& surrogate_path,
             const std::string& policy_path, const std::string& out) {
  const RunConfig cfg = c.load();
  const SurrogateParams surrogate = load_surrogate(surrogate_path);
  auto policy = std::make_shared<const PolicyParams>(load_policy(policy_path));
  const auto test = read_split(data, "test");
  const auto negative = cfg.dataset.negative_cases > 0 ? read_split(data, "negative") : std::vector<PhantomSample>{};
  const auto test_cases = make_cases(test, surrogate);
  const auto negative_cases = make_cases(negative, surrogate);
  std::vector<AblationVariant> variants;
  for (Protocol p : cfg.eval.protocols) {
    EvalOptions o;
    o.protocol = p;
    o.max_offset = cfg.eval.max_offset;
    o.prompts_per_case = cfg.eval.prompts_per_case;
    o.rng_seed = derive_seed(cfg.seed, 41);
    o.negative_threshold = cfg.eval.negative_threshold;
    const std::span<const Case> cases = p == Protocol::kGlandNegative ? std::span<const Case>(negative_cases)
                                                                      : std::span<const Case>(test_cases);
    if (cases.empty()) continue;
    variants.push_back({"rl/" + to_string(p), policy, cases, cfg.env, o});
    variants.push_back({"single-shot/" + to_string(p), nullptr, cases, cfg.env, o});
  }
  const auto rows = ablation_sweep(variants);
  write_reports(out, rows);
  ordered_json summary = ordered_json::object();
  for (const auto& r : rows) summary[r.name] = r.report.dice.mean;
  print_json({{"report", (fs::path(out) / "report.json").string()}, {"mean_dice", summary}});
  return 0;
}

int cmd_ablate(const Common& c, const std::string& data, const std::string& surrogate_path,
               const std::string& policy_path, const std::string& out, bool single_channel) {
  const RunConfig cfg = c.load();
  const SurrogateParams surrogate = load_surrogate(surrogate_path);
  const auto surrogate_samples = read_split(data, "surrogate");
  const auto agent = read_split(data, "agent");
  const auto test = read_split(data, "test");
  const auto negative = cfg.dataset.negative_cases > 0 ? read_split(data, "negative") : std::vector<PhantomSample>{};
  AblationInputs in;
  in.surrogate_samples = surrogate_samples;
  in.agent_samples = agent;
  in.test_samples = test;
  in.negative_samples = negative;
  in.surrogate = &surrogate;
  in.single_channel = single_channel;
  if (!policy_path.empty()) in.full_policy = std::make_shared<const PolicyParams>(load_policy(policy_path));
  const AblationResult res = run_ablation(cfg, in, [](const std::string& s) { std::cerr << s << std::endl; });
  write_reports(out, res.rows);
  for (const auto& [name, p] : res.policies) {
    std::string file = name;
    for (char& ch : file)
      if (ch == '=' || ch == '/') ch = '_';
    save_policy(fs::path(out) / "policies" / (file + ".ppm"), *p);
  }
  ordered_json summary = ordered_json::object();
  for (const auto& r : res.rows) summary[r.name] = r.report.dice.mean;
  print_json({{"report", (fs::path(out) / "report.json").string()}, {"mean_dice", summary}});
  return 0;
}

int cmd_serve(const Common& c, std::string host, std::optional<int> port, std::string static_dir,
              const std::vector<std::string>& volumes, const std::vector<std::string>& surrogates,
              const std::vector<std::string>& policies) {
  const RunConfig cfg = c.load();
  if (host.empty()) host = cfg.serve.host;
  if (static_dir.empty()) static_dir = cfg.serve.static_dir;
  ServiceOptions opts;
  opts.env = cfg.env;
  opts.session_ttl = std::chrono::seconds(cfg.serve.session_ttl_s);
  opts.static_dir = static_dir;
  Service service(opts);
  ordered_json loaded{{"volumes", ordered_json::array()},
                      {"surrogates", ordered_json::array()},
                      {"policies", ordered_json::array()}};
  for (const auto& v : volumes) loaded["volumes"].push_back(service.add_volume(read_volume(v)));
  for (const auto& s : surrogates) loaded["surrogates"].push_back(service.add_surrogate(load_surrogate(s)));
  for (const auto& p : policies) loaded["policies"].push_back(service.add_policy(load_policy(p)));
  httplib::Server server;
  service.bind(server);
  const int wanted = port.value_or(cfg.serve.port);
  const int bound = wanted == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, wanted) ? wanted : -1);
  if (bound < 0) fail(ErrorKind::kConfig, "cannot bind " + host + ":" + std::to_string(wanted), "serve.port");
  loaded["listening"] = host + ":" + std::to_string(bound);
  print_json(loaded);
  server.listen_after_bind();
  return 0;
}

int report_error(const char* kind, const std::string& message, const std::string& field, int code) {
  ordered_json j{{"error", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  std::cerr << j.dump() << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Promptable segmentation by entropy-gated region growing with a learned re-seeding policy"};
  app.require_subcommand(1);
  Common common;
  int rc = 0;

  std::string out, data, surrogate, policy, log, checkpoints, volume, prompt, truth, trace_dir;
  bool single_channel = true;

  auto* gen = app.add_subcommand("generate-dataset", "Write the synthetic phantom splits");
  add_common(gen, common);
  gen->add_option("-o,--out", out, "Dataset directory")->required();
  gen->callback([&] { rc = cmd_generate(common, out); });

  auto* ts = app.add_subcommand("train-surrogate", "Train the voxel-wise surrogate");
  add_common(ts, common);
  ts->add_option("-d,--data", data, "Dataset directory")->required();
  ts->add_option("-o,--out", out, "Output .spm")->required();
  ts->callback([&] { rc = cmd_train_surrogate(common, data, out); });

  auto* ta = app.add_subcommand("train-agent", "Train the re-seeding policy with PPO");
  add_common(ta, common);
  ta->add_option("-d,--data", data, "Dataset directory")->required();
  ta->add_option("-s,--surrogate", surrogate, "Surrogate .spm")->required();
  ta->add_option("-o,--out", out, "Output .ppm")->required();
  ta->add_option("--log", log, "Training log (default: train_log.jsonl next to the policy)");
  ta->add_option("--checkpoint-dir", checkpoints, "Directory for periodic checkpoints");
  ta->callback([&] { rc = cmd_train_agent(common, data, surrogate, out, log, checkpoints); });

  auto* inf = app.add_subcommand("infer", "Prompt, grow and refine one volume");
  add_common(inf, common);
  inf->add_option("-v,--volume", volume, "Input .svf")->required();
  inf->add_option("-p,--prompt", prompt, "Prompt voxel a,b,c")->required();
  inf->add_option("-s,--surrogate", surrogate, "Surrogate .spm")->required();
  inf->add_option("--policy", policy, "Policy .ppm (omit for single-shot growing)");
  inf->add_option("-o,--out", out, "Output .svm");
  inf->add_option("--truth", truth, "Ground-truth .svm for metrics");
  inf->add_option("--trace-dir", trace_dir, "Write per-step masks and trace.json here");
  inf->callback([&] { rc = cmd_infer(common, volume, prompt, surrogate, policy, out, truth, trace_dir); });

  auto* gr = app.add_subcommand("grow", "Single-shot region growing from one seed");
  add_common(gr, common);
  gr->add_option("-v,--volume", volume, "Input .svf")->required();
  gr->add_option("-p,--prompt", prompt, "Seed voxel a,b,c")->required();
  gr->add_option("-s,--surrogate", surrogate, "Surrogate .spm")->required();
  gr->add_option("-o,--out", out, "Output .svm");
  gr->callback([&] { rc = cmd_grow(common, volume, prompt, surrogate, out); });

  auto* ev = app.add_subcommand("eval", "Evaluate a policy against single-shot growing");
  add_common(ev, common);
  ev->add_option("-d,--data", data, "Dataset directory")->required();
  ev->add_option("-s,--surrogate", surrogate, "Surrogate .spm")->required();
  ev->add_option("--policy", policy, "Policy .ppm")->required();
  ev->add_option("-o,--out", out, "Report directory")->required();
  ev->callback([&] { rc = cmd_eval(common, data, surrogate, policy, out); });

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation variants");
  add_common(ab, common);
  ab->add_option("-d,--data", data, "Dataset directory")->required();
  ab->add_option("-s,--surrogate", surrogate, "Surrogate .spm")->required();
  ab->add_option("--policy", policy, "Reuse this policy for the full method");
  ab->add_option("-o,--out", out, "Report directory")->required();
  ab->add_flag("!--no-single-channel", single_channel, "Skip the single-channel variant");
  ab->callback([&] { rc = cmd_ablate(common, data, surrogate, policy, out, single_channel); });

  std::string host, static_dir;
  std::optional<int> port;
  std::vector<std::string> volumes, surrogates, policies;
  auto* sv = app.add_subcommand("serve", "Run the HTTP service");
  add_common(sv, common);
  sv->add_option("--host", host, "Bind address");
  sv->add_option("--port", port, "Port (0 picks a free one)");
  sv->add_option("--static-dir", static_dir, "Serve a static UI from this directory");
  sv->add_option("--volume", volumes, "Preload volumes");
  sv->add_option("--surrogate", surrogates, "Preload surrogates");
  sv->add_option("--policy", policies, "Preload policies");
  sv->callback([&] { rc = cmd_serve(common, host, port, static_dir, volumes, surrogates, policies); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("config", e.what(), "", exit_code(ErrorKind::kConfig));
  } catch (const Error& e) {
    return report_error(to_string(e.kind()), e.what(), e.field(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report_error("data", e.what(), "", exit_code(ErrorKind::kData));
  }
  return rc;
}
