#include "seedgrow/config.hpp"

#include <cstdio>
#include <set>

#include "seedgrow/rng.hpp"
#include "seedgrow/volume_io.hpp"

namespace seedgrow {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads the keys of one JSON object into typed fields and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorKind::kConfig, "expected an object", path_.empty() ? "<root>" : path_);
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, std::string("wrong type: ") + e.what(), at(key));
    }
  }

  Reader child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, at(key));
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorKind::kConfig, "unknown key", path_.empty() ? k : path_ + "." + k);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ordered_json voxel_json(const VoxelIndex& v) { return {v.a, v.b, v.c}; }

VoxelIndex voxel_from(Reader& r, const char* key, VoxelIndex fallback) {
  std::vector<int> v{fallback.a, fallback.b, fallback.c};
  r.get(key, v);
  if (v.size() != 3) fail(ErrorKind::kConfig, "expected three integers", r.at(key));
  return {v[0], v[1], v[2]};
}

const char* start_name(StartMode m) { return m == StartMode::kInLesion ? "in-lesion" : "gland-centre"; }

StartMode start_from(const std::string& s, const std::string& field) {
  if (s == "in-lesion") return StartMode::kInLesion;
  if (s == "gland-centre") return StartMode::kGlandCentre;
  fail(ErrorKind::kConfig, "unknown start mode '" + s + "'", field);
}

const char* reduction_name(ChannelReduction r) { return r == ChannelReduction::kMax ? "max" : "mean"; }

ChannelReduction reduction_from(const std::string& s, const std::string& field) {
  if (s == "max") return ChannelReduction::kMax;
  if (s == "mean") return ChannelReduction::kMean;
  fail(ErrorKind::kConfig, "unknown channel reduction '" + s + "'", field);
}

ordered_json grow_json(const GrowConfig& g) {
  return {{"radius", voxel_json(g.radius)},
          {"tau_sigma", g.tau_sigma},
          {"tau_e", g.tau_e},
          {"max_iters", g.max_iters},
          {"reduction", reduction_name(g.reduction)}};
}

void read_grow(Reader r, GrowConfig& g) {
  g.radius = voxel_from(r, "radius", g.radius);
  r.get("tau_sigma", g.tau_sigma);
  r.get("tau_e", g.tau_e);
  r.get("max_iters", g.max_iters);
  std::string red = reduction_name(g.reduction);
  r.get("reduction", red);
  g.reduction = reduction_from(red, r.at("reduction"));
  r.finish();
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 1) fail(ErrorKind::kConfig, "threads must be >= 1", "threads");
  phantom.validate();
  if (dataset.surrogate_cases < 1 || dataset.agent_cases < 1 || dataset.test_cases < 0 || dataset.negative_cases < 0)
    fail(ErrorKind::kConfig, "dataset split sizes are invalid", "dataset");
  if (dataset.mimic_fraction < 0.0 || dataset.mimic_fraction > 1.0)
    fail(ErrorKind::kConfig, "mimic_fraction must lie in [0, 1]", "dataset.mimic_fraction");
  if (dataset.negative_mimic_fraction < 0.0 || dataset.negative_mimic_fraction > 1.0)
    fail(ErrorKind::kConfig, "negative_mimic_fraction must lie in [0, 1]", "dataset.negative_mimic_fraction");
  if (surrogate_arch.channels != phantom.channels)
    fail(ErrorKind::kConfig, "surrogate channels must equal phantom channels", "surrogate.arch.channels");
  if (agent.arch.channels != phantom.channels)
    fail(ErrorKind::kConfig, "policy channels must equal phantom channels", "agent.arch.channels");
  surrogate_train.validate();
  env.validate();
  agent.arch.validate();
  agent.ppo.validate();
  if (agent.checkpoint_every < 0) fail(ErrorKind::kConfig, "checkpoint_every must be >= 0", "agent.checkpoint_every");
  if (eval.max_offset < 1) fail(ErrorKind::kConfig, "max_offset must be >= 1", "eval.max_offset");
  if (eval.prompts_per_case < 1) fail(ErrorKind::kConfig, "prompts_per_case must be >= 1", "eval.prompts_per_case");
  for (double b : eval.betas)
    if (!(b >= 0.0) || !std::isfinite(b)) fail(ErrorKind::kConfig, "betas must be finite and >= 0", "eval.betas");
  if (serve.port < 0 || serve.port > 65535) fail(ErrorKind::kConfig, "port out of range", "serve.port");
  if (serve.session_ttl_s < 1) fail(ErrorKind::kConfig, "session_ttl_s must be >= 1", "serve.session_ttl_s");
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  const auto& p = c.phantom;
  j["phantom"] = {{"dims", {p.dims.h, p.dims.w, p.dims.d}},
                  {"channels", p.channels},
                  {"lesion_radius_range", {p.lesion_radius_range.first, p.lesion_radius_range.second}},
                  {"lesion_contrast", p.lesion_contrast},
                  {"heterogeneity", p.heterogeneity},
                  {"noise_std", p.noise_std},
                  {"gland_texture", p.gland_texture},
                  {"outside_texture", p.outside_texture},
                  {"mimic_texture", p.mimic_texture},
                  {"spacing_mm", {p.spacing[0], p.spacing[1], p.spacing[2]}}};
  const auto& d = c.dataset;
  j["dataset"] = {{"surrogate_cases", d.surrogate_cases},
                  {"agent_cases", d.agent_cases},
                  {"test_cases", d.test_cases},
                  {"negative_cases", d.negative_cases},
                  {"mimic_fraction", d.mimic_fraction},
                  {"negative_mimic_fraction", d.negative_mimic_fraction}};
  const auto& st = c.surrogate_train;
  j["surrogate"] = {{"arch",
                     {{"features", c.surrogate_arch.features == FeatureSet::kRaw ? "raw" : "full"},
                      {"channels", c.surrogate_arch.channels},
                      {"hidden", c.surrogate_arch.hidden}}},
                    {"learning_rate", st.learning_rate},
                    {"final_learning_rate", st.final_learning_rate},
                    {"epochs", st.epochs},
                    {"batch_size", st.batch_size},
                    {"adam_beta1", st.adam_beta1},
                    {"adam_beta2", st.adam_beta2},
                    {"adam_eps", st.adam_eps}};
  j["env"] = {{"beta", c.env.beta}, {"horizon", c.env.horizon}, {"grow", grow_json(c.env.grow)}};
  const auto& a = c.agent.arch;
  const auto& o = c.agent.ppo;
  j["agent"] = {{"arch",
                 {{"pool_grid", a.pool_grid},
                  {"action_grid", a.action_grid},
                  {"channels", a.channels},
                  {"hidden1", a.hidden1},
                  {"hidden2", a.hidden2},
                  {"critic_hidden", a.critic_hidden}}},
                {"ppo",
                 {{"learning_rate", o.learning_rate},
                  {"gamma", o.gamma},
                  {"clip_eps", o.clip_eps},
                  {"gae_lambda", o.gae_lambda},
                  {"entropy_coef", o.entropy_coef},
                  {"value_coef", o.value_coef},
                  {"batch_size", o.batch_size},
                  {"total_steps", o.total_steps},
                  {"updates_per_batch", o.updates_per_batch},
                  {"minibatch_size", o.minibatch_size},
                  {"max_grad_norm", o.max_grad_norm},
                  {"normalize_advantages", o.normalize_advantages},
                  {"adam_beta1", o.adam_beta1},
                  {"adam_beta2", o.adam_beta2},
                  {"adam_eps", o.adam_eps}}},
                {"start", start_name(c.agent.start)},
                {"checkpoint_every", c.agent.checkpoint_every}};
  ordered_json protocols = ordered_json::array();
  for (Protocol pr : c.eval.protocols) protocols.push_back(to_string(pr));
  j["eval"] = {{"protocols", protocols},
               {"max_offset", c.eval.max_offset},
               {"prompts_per_case", c.eval.prompts_per_case},
               {"negative_threshold", c.eval.negative_threshold ? ordered_json(*c.eval.negative_threshold)
                                                                : ordered_json(nullptr)},
               {"betas", c.eval.betas}};
  j["serve"] = {{"host", c.serve.host},
                {"port", c.serve.port},
                {"session_ttl_s", c.serve.session_ttl_s},
                {"static_dir", c.serve.static_dir}};
  return j;
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  Reader root(doc, "");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  {
    Reader r = root.child("phantom");
    auto& p = c.phantom;
    const VoxelIndex dims = voxel_from(r, "dims", {p.dims.h, p.dims.w, p.dims.d});
    p.dims = {dims.a, dims.b, dims.c};
    r.get("channels", p.channels);
    std::vector<double> range{p.lesion_radius_range.first, p.lesion_radius_range.second};
    r.get("lesion_radius_range", range);
    if (range.size() != 2) fail(ErrorKind::kConfig, "expected [min, max]", "phantom.lesion_radius_range");
    p.lesion_radius_range = {range[0], range[1]};
    r.get("lesion_contrast", p.lesion_contrast);
    r.get("heterogeneity", p.heterogeneity);
    r.get("noise_std", p.noise_std);
    r.get("gland_texture", p.gland_texture);
    r.get("outside_texture", p.outside_texture);
    r.get("mimic_texture", p.mimic_texture);
    std::vector<double> sp{p.spacing[0], p.spacing[1], p.spacing[2]};
    r.get("spacing_mm", sp);
    if (sp.size() != 3) fail(ErrorKind::kConfig, "expected three spacings", "phantom.spacing_mm");
    p.spacing = {sp[0], sp[1], sp[2]};
    r.finish();
  }
  {
    Reader r = root.child("dataset");
    auto& d = c.dataset;
    r.get("surrogate_cases", d.surrogate_cases);
    r.get("agent_cases", d.agent_cases);
    r.get("test_cases", d.test_cases);
    r.get("negative_cases", d.negative_cases);
    r.get("mimic_fraction", d.mimic_fraction);
    r.get("negative_mimic_fraction", d.negative_mimic_fraction);
    r.finish();
  }
  {
    Reader r = root.child("surrogate");
    {
      Reader a = r.child("arch");
      std::string features = c.surrogate_arch.features == FeatureSet::kRaw ? "raw" : "full";
      a.get("features", features);
      if (features == "raw") c.surrogate_arch.features = FeatureSet::kRaw;
      else if (features == "full") c.surrogate_arch.features = FeatureSet::kFull;
      else fail(ErrorKind::kConfig, "unknown feature set '" + features + "'", "surrogate.arch.features");
      a.get("channels", c.surrogate_arch.channels);
      a.get("hidden", c.surrogate_arch.hidden);
      a.finish();
    }
    auto& st = c.surrogate_train;
    r.get("learning_rate", st.learning_rate);
    r.get("final_learning_rate", st.final_learning_rate);
    r.get("epochs", st.epochs);
    r.get("batch_size", st.batch_size);
    r.get("adam_beta1", st.adam_beta1);
    r.get("adam_beta2", st.adam_beta2);
    r.get("adam_eps", st.adam_eps);
    r.finish();
  }
  {
    Reader r = root.child("env");
    r.get("beta", c.env.beta);
    r.get("horizon", c.env.horizon);
    read_grow(r.child("grow"), c.env.grow);
    r.finish();
  }
  {
    Reader r = root.child("agent");
    {
      Reader a = r.child("arch");
      auto& arch = c.agent.arch;
      a.get("pool_grid", arch.pool_grid);
      a.get("action_grid", arch.action_grid);
      a.get("channels", arch.channels);
      a.get("hidden1", arch.hidden1);
      a.get("hidden2", arch.hidden2);
      a.get("critic_hidden", arch.critic_hidden);
      a.finish();
    }
    {
      Reader o = r.child("ppo");
      auto& p = c.agent.ppo;
      o.get("learning_rate", p.learning_rate);
      o.get("gamma", p.gamma);
      o.get("clip_eps", p.clip_eps);
      o.get("gae_lambda", p.gae_lambda);
      o.get("entropy_coef", p.entropy_coef);
      o.get("value_coef", p.value_coef);
      o.get("batch_size", p.batch_size);
      o.get("total_steps", p.total_steps);
      o.get("updates_per_batch", p.updates_per_batch);
      o.get("minibatch_size", p.minibatch_size);
      o.get("max_grad_norm", p.max_grad_norm);
      o.get("normalize_advantages", p.normalize_advantages);
      o.get("adam_beta1", p.adam_beta1);
      o.get("adam_beta2", p.adam_beta2);
      o.get("adam_eps", p.adam_eps);
      o.finish();
    }
    std::string start = start_name(c.agent.start);
    r.get("start", start);
    c.agent.start = start_from(start, "agent.start");
    r.get("checkpoint_every", c.agent.checkpoint_every);
    r.finish();
  }
  {
    Reader r = root.child("eval");
    auto& e = c.eval;
    if (r.has("protocols")) {
      std::vector<std::string> names;
      r.get("protocols", names);
      e.protocols.clear();
      for (const auto& n : names) e.protocols.push_back(protocol_from(n));
    }
    r.get("max_offset", e.max_offset);
    r.get("prompts_per_case", e.prompts_per_case);
    if (r.has("negative_threshold")) {
      const json& t = r.raw("negative_threshold");
      if (t.is_null()) e.negative_threshold.reset();
      else if (t.is_number_unsigned()) e.negative_threshold = t.get<std::size_t>();
      else fail(ErrorKind::kConfig, "expected a voxel count or null", "eval.negative_threshold");
    }
    r.get("betas", e.betas);
    r.finish();
  }
  {
    Reader r = root.child("serve");
    r.get("host", c.serve.host);
    r.get("port", c.serve.port);
    r.get("session_ttl_s", c.serve.session_ttl_s);
    r.get("static_dir", c.serve.static_dir);
    r.finish();
  }
  root.finish();
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = text.empty() ? json::object() : json::parse(text, nullptr, true, true);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what(), "<root>");
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::kConfig, "override must look like key.path=value", o);
    const std::string key = o.substr(0, eq);
    const std::string value = o.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) fail(ErrorKind::kConfig, "empty path component", key);
      if (!node->is_object()) fail(ErrorKind::kConfig, "override path crosses a non-object", key);
      if (dot == std::string::npos) {
        (*node)[part] = parsed;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
  }
  RunConfig cfg = run_config_from_json(doc);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, e.what(), "config");
  }
  return parse_run_config(text, overrides);
}

namespace {

int split_id(const std::string& split) {
  for (int i = 0; i < 4; ++i)
    if (split == kSplits[i]) return i;
  fail(ErrorKind::kConfig, "unknown split '" + split + "'", "split");
}

int split_size(const DatasetConfig& d, int id) {
  const int sizes[] = {d.surrogate_cases, d.agent_cases, d.test_cases, d.negative_cases};
  return sizes[id];
}

std::string sample_stem(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%04d", i);
  return buf;
}

}  // namespace

std::vector<PhantomSample> generate_split(const RunConfig& cfg, const std::string& split) {
  const int id = split_id(split);
  const int n = split_size(cfg.dataset, id);
  std::vector<PhantomSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PhantomSpec spec = cfg.phantom;
    spec.rng_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(id) * 1000003ULL + static_cast<std::uint64_t>(i));
    spec.lesion_count = split == "negative" ? 0 : 1;
    // Spread mimics evenly: sample i gets one when the running quota steps up.
    const double f = split == "negative" ? cfg.dataset.negative_mimic_fraction : cfg.dataset.mimic_fraction;
    spec.mimic_count = static_cast<int>(std::floor((i + 1) * f + 1e-9)) > static_cast<int>(std::floor(i * f + 1e-9)) ? 1 : 0;
    out.push_back(generate(spec));
  }
  return out;
}

void write_split(const std::filesystem::path& root, const std::string& split, std::span<const PhantomSample> samples) {
  split_id(split);
  const auto dir = root / split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = sample_stem(static_cast<int>(i));
    write_volume(dir / (stem + ".svf"), samples[i].volume);
    write_mask(dir / (stem + ".truth.svm"), samples[i].truth, samples[i].volume.spacing());
    write_mask(dir / (stem + ".gland.svm"), samples[i].gland, samples[i].volume.spacing());
  }
}

std::vector<PhantomSample> read_split(const std::filesystem::path& root, const std::string& split) {
  split_id(split);
  const auto dir = root / split;
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::kData, "missing split directory " + dir.string(), "data_dir");
  std::vector<PhantomSample> out;
  for (int i = 0;; ++i) {
    const std::string stem = sample_stem(i);
    if (!std::filesystem::exists(dir / (stem + ".svf"))) break;
    PhantomSample s{read_volume(dir / (stem + ".svf")), read_mask(dir / (stem + ".truth.svm")), {},
                    read_mask(dir / (stem + ".gland.svm")), Mask()};
    require_same_dims(s.volume.dims(), s.truth.dims(), stem.c_str());
    require_same_dims(s.volume.dims(), s.gland.dims(), stem.c_str());
    s.mimics = Mask(s.volume.dims());
    out.push_back(std::move(s));
  }
  if (out.empty()) fail(ErrorKind::kData, "split " + split + " holds no samples", "data_dir");
  return out;
}

void write_manifest(const std::filesystem::path& root, const RunConfig& cfg) {
  ordered_json m;
  m["format"] = "seedgrow-dataset/1";
  m["seed"] = cfg.seed;
  m["phantom"] = to_json(cfg)["phantom"];
  m["splits"] = ordered_json::object();
  for (int i = 0; i < 4; ++i) m["splits"][kSplits[i]] = split_size(cfg.dataset, i);
  write_file(root / "manifest.json", m.dump(2) + "\n");
}

}  // namespace seedgrow
