#include "seedgrow/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "seedgrow/volume_io.hpp"

namespace seedgrow {

double dice_score(const Mask& pred, const Mask& truth) { return 1.0 - dice_loss(pred, truth); }

Confusion confusion(const Mask& pred, const Mask& truth) {
  require_same_dims(pred.dims(), truth.dims(), "confusion");
  const auto p = pred.array() != 0;
  const auto t = truth.array() != 0;
  Confusion c;
  c.tp = static_cast<std::size_t>((p && t).count());
  c.fp = static_cast<std::size_t>((p && !t).count());
  c.fn = static_cast<std::size_t>((!p && t).count());
  c.tn = pred.size() - c.tp - c.fp - c.fn;
  return c;
}

Rates fpr_sensitivity(const Mask& pred, const Mask& truth) {
  const Confusion c = confusion(pred, truth);
  Rates r;
  r.fpr = c.fp + c.tn == 0 ? 0.0 : static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  if (c.tp + c.fn > 0) r.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return r;
}

bool classify_negative(const Mask& final_mask, const GrowConfig& cfg, std::optional<std::size_t> threshold) {
  return count(final_mask) <= threshold.value_or(cfg.window_volume());
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::kData, "paired samples differ in length", "samples");
  if (a.size() < 2) fail(ErrorKind::kData, "paired t-test needs at least two pairs", "samples");
  const auto n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double se = std::sqrt(ss / (n - 1.0) / n);
  TTest out;
  out.df = n - 1.0;
  out.mean_difference = mean;
  if (se == 0.0) {
    out.t = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
    out.p_two_sided = mean == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = mean / se;
  const boost::math::students_t dist(out.df);
  out.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kInLesion: return "in-lesion";
    case Protocol::kPerturbed: return "perturbed";
    case Protocol::kGlandNegative: return "gland-negative";
    case Protocol::kNoPrompt: return "no-prompt";
  }
  return "?";
}

Protocol protocol_from(const std::string& name) {
  for (Protocol p : {Protocol::kInLesion, Protocol::kPerturbed, Protocol::kGlandNegative, Protocol::kNoPrompt})
    if (to_string(p) == name) return p;
  fail(ErrorKind::kConfig, "unknown protocol '" + name + "'", "eval.protocol");
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.n = values.size();
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(a.n);
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(ss / static_cast<double>(a.n));
  return a;
}

void EvalReport::finalise() {
  std::vector<double> d, f, s;
  true_negative = false_negative = true_positive = false_positive = 0;
  for (const auto& r : rows) {
    if (!r.truth_empty) d.push_back(r.dice);
    f.push_back(r.fpr);
    if (r.sensitivity) s.push_back(*r.sensitivity);
    if (r.truth_empty) {
      (r.predicted_negative ? true_negative : false_positive) += 1;
    } else {
      (r.predicted_negative ? false_negative : true_positive) += 1;
    }
  }
  dice = aggregate(d);
  fpr = aggregate(f);
  sensitivity = aggregate(s);
}

std::vector<double> EvalReport::dice_values() const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (!r.truth_empty) out.push_back(r.dice);
  return out;
}

namespace {

std::optional<VoxelIndex> choose_prompt(const Case& c, const EvalOptions& o, std::uint64_t seed) {
  const PhantomSample& s = *c.sample;
  const bool empty = count(c.truth) == 0;
  switch (o.protocol) {
    case Protocol::kInLesion: return empty ? sample_seed_in_gland(s, seed) : sample_seed_in_lesion(s, seed);
    case Protocol::kPerturbed:
      if (empty) return std::nullopt;
      return sample_perturbed_seed(s, o.max_offset, seed);
    case Protocol::kGlandNegative: return sample_seed_in_gland(s, seed);
    case Protocol::kNoPrompt: return gland_centre_seed(s);
  }
  return std::nullopt;
}

}  // namespace

EvalReport eval_suite(std::span<const Case> cases, std::shared_ptr<const PolicyParams> policy, const EnvConfig& env,
                      const EvalOptions& options) {
  if (options.prompts_per_case < 1) fail(ErrorKind::kConfig, "prompts_per_case must be >= 1", "eval.prompts_per_case");
  EvalReport report;
  report.method = policy ? "rl" : "single-shot";
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const Case& c = cases[k];
    if (!c.sample) fail(ErrorKind::kData, "evaluation case lacks its phantom sample", "dataset");
    auto senv = std::make_shared<const SegmentationEnv>(c.volume, c.entropy, c.truth, env);
    const auto dist = chebyshev_distance(c.truth);
    for (int j = 0; j < options.prompts_per_case; ++j) {
      const auto prompt = choose_prompt(c, options, derive_seed(options.rng_seed, k * 1000 + j));
      if (!prompt) continue;
      const InferenceResult res = infer(senv, policy, *prompt);
      EvalRow row;
      row.case_index = k;
      row.protocol = to_string(options.protocol);
      row.prompt = *prompt;
      row.seed_offset = dist(*prompt);
      row.truth_empty = count(c.truth) == 0;
      row.dice = dice_score(res.mask, c.truth);
      const Rates r = fpr_sensitivity(res.mask, c.truth);
      row.fpr = r.fpr;
      row.sensitivity = r.sensitivity;
      row.voxels = count(res.mask);
      row.steps = static_cast<int>(res.trace.size()) - 1;
      row.predicted_negative = classify_negative(res.mask, env.grow, options.negative_threshold);
      report.rows.push_back(row);
    }
  }
  report.finalise();
  return report;
}

std::vector<AblationRow> ablation_sweep(std::span<const AblationVariant> variants) {
  std::vector<AblationRow> out;
  for (const auto& v : variants) {
    EvalReport r = eval_suite(v.cases, v.policy, v.env, v.options);
    if (!v.policy) r.method = "single-shot";
    out.push_back({v.name, std::move(r)});
  }
  return out;
}

std::vector<double> prompt_variability(std::span<const Case> cases, std::shared_ptr<const PolicyParams> policy,
                                       const EnvConfig& env, int n_prompts, std::uint64_t rng_seed) {
  if (n_prompts < 2) fail(ErrorKind::kConfig, "prompt variability needs at least two prompts", "n_prompts");
  EvalOptions o;
  o.protocol = Protocol::kInLesion;
  o.prompts_per_case = n_prompts;
  o.rng_seed = rng_seed;
  std::vector<double> out;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    if (count(cases[k].truth) == 0) continue;
    const EvalReport r = eval_suite(cases.subspan(k, 1), policy, env, o);
    out.push_back(aggregate(r.dice_values()).std);
  }
  return out;
}

namespace {

nlohmann::ordered_json aggregate_json(const Aggregate& a) { return {{"mean", a.mean}, {"std", a.std}, {"n", a.n}}; }

}  // namespace

std::string report_json(std::span<const AblationRow> rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    const EvalReport& r = row.report;
    nlohmann::ordered_json j;
    j["name"] = row.name;
    j["method"] = r.method;
    j["dice"] = aggregate_json(r.dice);
    j["fpr"] = aggregate_json(r.fpr);
    j["sensitivity"] = aggregate_json(r.sensitivity);
    j["negatives"] = {{"true_negative", r.true_negative},
                      {"false_negative", r.false_negative},
                      {"true_positive", r.true_positive},
                      {"false_positive", r.false_positive}};
    auto& cases = j["cases"] = nlohmann::ordered_json::array();
    for (const auto& e : r.rows) {
      nlohmann::ordered_json c;
      c["case"] = e.case_index;
      c["protocol"] = e.protocol;
      c["prompt"] = {e.prompt.a, e.prompt.b, e.prompt.c};
      c["seed_offset"] = e.seed_offset;
      c["truth_empty"] = e.truth_empty;
      c["dice"] = e.dice;
      c["fpr"] = e.fpr;
      c["sensitivity"] = e.sensitivity ? nlohmann::ordered_json(*e.sensitivity) : nlohmann::ordered_json(nullptr);
      c["voxels"] = e.voxels;
      c["steps"] = e.steps;
      c["negative"] = e.predicted_negative;
      cases.push_back(std::move(c));
    }
    out.push_back(std::move(j));
  }
  return out.dump(2) + "\n";
}

std::string report_markdown(std::span<const AblationRow> rows) {
  std::ostringstream md;
  md << std::fixed << std::setprecision(3);
  md << "| Variant | Method | Dice | FPR | Sensitivity | TN/FP | TP/FN |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const auto& row : rows) {
    const EvalReport& r = row.report;
    md << "| " << row.name << " | " << r.method << " | " << r.dice.mean << " ± " << r.dice.std << " | " << r.fpr.mean
       << " ± " << r.fpr.std << " | " << r.sensitivity.mean << " ± " << r.sensitivity.std << " | " << r.true_negative
       << "/" << r.false_positive << " | " << r.true_positive << "/" << r.false_negative << " |\n";
  }
  return md.str();
}

void write_reports(const std::filesystem::path& dir, std::span<const AblationRow> rows) {
  write_file(dir / "report.json", report_json(rows));
  write_file(dir / "report.md", report_markdown(rows));
}

}  // namespace seedgrow
