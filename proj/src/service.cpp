#include "seedgrow/service.hpp"

#include <httplib.h>

#include <cmath>
#include <thread>

#include <json.hpp>

#include "seedgrow/metrics.hpp"
#include "seedgrow/png.hpp"
#include "seedgrow/volume_io.hpp"

namespace seedgrow {

VoxelIndex SliceGeometry::voxel(int row, int col) const {
  switch (axis) {
    case 0: return {index, row, col};
    case 1: return {row, index, col};
    default: return {row, col, index};
  }
}

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct HttpError {
  int status;
  std::string code;
  std::string message;
  std::string field;
};

[[noreturn]] void http_fail(int status, std::string code, std::string message, std::string field = "") {
  throw HttpError{status, std::move(code), std::move(message), std::move(field)};
}

void send_error(httplib::Response& res, const HttpError& e) {
  ordered_json body{{"code", e.code}, {"message", e.message}};
  if (!e.field.empty()) body["field"] = e.field;
  res.status = e.status;
  res.set_content(body.dump(), "application/json");
}

int status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::kConfig: return 400;
    case ErrorKind::kData: return 422;
    case ErrorKind::kNumeric: return 500;
  }
  return 500;
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const HttpError& e) {
    send_error(res, e);
  } catch (const Error& e) {
    send_error(res, {status_for(e.kind()), to_string(e.kind()), e.what(), e.field()});
  } catch (const json::exception& e) {
    send_error(res, {400, "bad_request", std::string("malformed JSON: ") + e.what(), "body"});
  } catch (const std::exception& e) {
    send_error(res, {500, "internal", e.what(), ""});
  }
}

void send_json(httplib::Response& res, const ordered_json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) http_fail(400, "bad_request", "request body must be a JSON object", "body");
  return j;
}

bool is_json(const httplib::Request& req) {
  return req.get_header_value("Content-Type").rfind("application/json", 0) == 0;
}

int parse_int(const std::string& text, const char* field) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    http_fail(400, "bad_request", std::string("expected an integer for ") + field, field);
  }
}

int parse_axis(const std::string& s) {
  if (s == "a" || s == "0") return 0;
  if (s == "b" || s == "1") return 1;
  if (s == "c" || s == "2") return 2;
  http_fail(400, "bad_request", "axis must be a, b or c", "axis");
}

SliceGeometry geometry_from(const httplib::Request& req, const Dims& dims) {
  if (!req.has_param("axis")) http_fail(400, "bad_request", "missing axis", "axis");
  if (!req.has_param("index")) http_fail(400, "bad_request", "missing index", "index");
  const int axis = parse_axis(req.get_param_value("axis"));
  const int index = parse_int(req.get_param_value("index"), "index");
  const int extent = axis == 0 ? dims.h : axis == 1 ? dims.w : dims.d;
  if (index < 0 || index >= extent)
    http_fail(404, "not_found", "slice " + std::to_string(index) + " outside [0, " + std::to_string(extent) + ")",
              "index");
  return slice_geometry(dims, axis, index);
}

ordered_json dims_json(const Dims& d) { return {d.h, d.w, d.d}; }

}  // namespace

SliceGeometry slice_geometry(const Dims& dims, int axis, int index) {
  SliceGeometry g;
  g.axis = axis;
  g.index = index;
  switch (axis) {
    case 0: g.rows = dims.w; g.cols = dims.d; break;
    case 1: g.rows = dims.h; g.cols = dims.d; break;
    case 2: g.rows = dims.h; g.cols = dims.w; break;
    default: fail(ErrorKind::kConfig, "axis must be 0, 1 or 2", "axis");
  }
  const int extent = axis == 0 ? dims.h : axis == 1 ? dims.w : dims.d;
  if (index < 0 || index >= extent) fail(ErrorKind::kData, "slice index outside the grid", "index");
  return g;
}

std::string render_slice_png(const Volume& x, int channel, const SliceGeometry& g) {
  if (channel < 0 || channel >= x.channels()) fail(ErrorKind::kData, "channel out of range", "channel");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(g.rows) * static_cast<std::size_t>(g.cols));
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      const double v = std::clamp(static_cast<double>(x.at(channel, g.voxel(r, c))), 0.0, 1.0);
      px[static_cast<std::size_t>(r) * g.cols + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return encode_png_gray(px, g.cols, g.rows);
}

std::vector<std::vector<int>> mask_rle_rows(const Mask& m, const SliceGeometry& g) {
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(g.rows));
  for (int r = 0; r < g.rows; ++r) {
    auto& runs = rows[static_cast<std::size_t>(r)];
    int c = 0;
    while (c < g.cols) {
      if (!m(g.voxel(r, c))) {
        ++c;
        continue;
      }
      const int start = c;
      while (c < g.cols && m(g.voxel(r, c))) ++c;
      runs.push_back(start);
      runs.push_back(c - start);
    }
  }
  return rows;
}

struct Service::VolumeEntry {
  std::string id;
  std::shared_ptr<const Volume> volume;
  std::optional<Mask> truth;
};

struct Service::Session {
  std::string id, volume_id, policy_id, surrogate_id;
  std::mutex mutex;
  std::atomic<bool> busy{false};
  std::chrono::steady_clock::time_point last_used;
  std::unique_ptr<PromptSession> engine;
};

namespace {

// Holds the single-flight flag for the lifetime of a mutating request.
class FlightGuard {
 public:
  explicit FlightGuard(std::atomic<bool>& flag) : flag_(flag) {
    bool expected = false;
    if (!flag_.compare_exchange_strong(expected, true))
      http_fail(409, "conflict", "another request is already modifying this session", "session");
  }
  ~FlightGuard() { flag_.store(false); }
  FlightGuard(const FlightGuard&) = delete;
  FlightGuard& operator=(const FlightGuard&) = delete;

 private:
  std::atomic<bool>& flag_;
};

}  // namespace

Service::Service(ServiceOptions options) : options_(std::move(options)) { options_.env.validate(); }

Service::~Service() = default;

std::string Service::next_id(const char* prefix) { return std::string(prefix) + std::to_string(++counter_); }

std::string Service::add_volume(Volume volume, std::optional<Mask> truth) {
  volume.validate();
  if (truth) require_same_dims(volume.dims(), truth->dims(), "truth");
  auto entry = std::make_shared<VolumeEntry>();
  entry->volume = std::make_shared<const Volume>(std::move(volume));
  entry->truth = std::move(truth);
  std::lock_guard lock(mutex_);
  entry->id = next_id("v");
  volumes_[entry->id] = entry;
  return entry->id;
}

std::string Service::add_surrogate(SurrogateParams params) {
  params.validate();
  std::lock_guard lock(mutex_);
  const std::string id = next_id("s");
  surrogates_[id] = std::make_shared<const SurrogateParams>(std::move(params));
  return id;
}

std::string Service::add_policy(PolicyParams params) {
  params.validate();
  std::lock_guard lock(mutex_);
  const std::string id = next_id("p");
  policies_[id] = std::make_shared<const PolicyParams>(std::move(params));
  return id;
}

std::shared_ptr<Service::VolumeEntry> Service::volume(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = volumes_.find(id);
  if (it == volumes_.end()) http_fail(404, "not_found", "unknown volume '" + id + "'", "volume_id");
  return it->second;
}

std::shared_ptr<Service::Session> Service::session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) http_fail(404, "not_found", "unknown session '" + id + "'", "session");
  it->second->last_used = options_.clock();
  return it->second;
}

std::shared_ptr<const SegmentationEnv> Service::env_for(const std::shared_ptr<VolumeEntry>& v,
                                                        const std::string& surrogate_id) {
  std::shared_ptr<const SurrogateParams> surrogate;
  {
    std::lock_guard lock(mutex_);
    const auto key = std::make_pair(v->id, surrogate_id);
    if (const auto it = env_cache_.find(key); it != env_cache_.end()) return it->second;
    const auto s = surrogates_.find(surrogate_id);
    if (s == surrogates_.end()) http_fail(404, "not_found", "unknown surrogate '" + surrogate_id + "'", "surrogate_id");
    surrogate = s->second;
  }
  // The entropy field is computed outside the lock; a racing request may
  // compute it twice, and both results are identical.
  auto env = std::make_shared<const SegmentationEnv>(
      SegmentationEnv::from_surrogate(v->volume, *surrogate, v->truth, options_.env));
  std::lock_guard lock(mutex_);
  return env_cache_.emplace(std::make_pair(v->id, surrogate_id), env).first->second;
}

std::string Service::create_session(const std::string& volume_id, const std::string& policy_id,
                                    const std::string& surrogate_id) {
  const auto v = volume(volume_id);
  std::shared_ptr<const PolicyParams> policy;
  {
    std::lock_guard lock(mutex_);
    const auto it = policies_.find(policy_id);
    if (it == policies_.end()) http_fail(404, "not_found", "unknown policy '" + policy_id + "'", "policy_id");
    policy = it->second;
  }
  auto s = std::make_shared<Session>();
  s->volume_id = volume_id;
  s->policy_id = policy_id;
  s->surrogate_id = surrogate_id;
  s->engine = std::make_unique<PromptSession>(env_for(v, surrogate_id), policy);
  std::lock_guard lock(mutex_);
  s->id = next_id("sess");
  s->last_used = options_.clock();
  sessions_[s->id] = s;
  return s->id;
}

std::size_t Service::evict_expired() {
  const auto now = options_.clock();
  std::lock_guard lock(mutex_);
  std::size_t removed = 0;
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (!it->second->busy.load() && now - it->second->last_used > options_.session_ttl) {
      it = sessions_.erase(it);
      ++removed;
    } else {
      ++it;
    }
  }
  return removed;
}

std::size_t Service::session_count() const {
  std::lock_guard lock(mutex_);
  return sessions_.size();
}

void Service::bind(httplib::Server& server) {
  using httplib::Request;
  using httplib::Response;
  const std::string api = "/api/v1";

  server.set_pre_routing_handler([this](const Request&, Response&) {
    evict_expired();
    return httplib::Server::HandlerResponse::Unhandled;
  });

  server.Get(api + "/health", [](const Request&, Response& res) { send_json(res, {{"status", "ok"}}); });

  server.Post(api + "/volumes", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      std::optional<Volume> vol;
      std::optional<Mask> truth;
      if (is_json(req)) {
        const json body = parse_body(req);
        if (!body.contains("path")) http_fail(400, "bad_request", "expected a path or an SVF body", "path");
        vol = read_volume(body.at("path").get<std::string>());
        if (body.contains("truth_path")) truth = read_mask(body.at("truth_path").get<std::string>());
      } else {
        vol = decode_volume(req.body);
      }
      const Dims d = vol->dims();
      const int channels = vol->channels();
      const Spacing sp = vol->spacing();
      const bool has_truth = truth.has_value();
      const std::string id = add_volume(std::move(*vol), std::move(truth));
      send_json(res,
                {{"id", id}, {"dims", dims_json(d)}, {"channels", channels}, {"spacing_mm", sp}, {"has_truth", has_truth}},
                201);
    });
  });

  server.Get(api + "/volumes/:id", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto v = volume(req.path_params.at("id"));
      send_json(res, {{"id", v->id},
                      {"dims", dims_json(v->volume->dims())},
                      {"channels", v->volume->channels()},
                      {"spacing_mm", v->volume->spacing()},
                      {"has_truth", v->truth.has_value()}});
    });
  });

  server.Get(api + "/volumes/:id/slice", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto v = volume(req.path_params.at("id"));
      const SliceGeometry g = geometry_from(req, v->volume->dims());
      const int channel = req.has_param("channel") ? parse_int(req.get_param_value("channel"), "channel") : 0;
      if (channel < 0 || channel >= v->volume->channels())
        http_fail(404, "not_found", "channel " + std::to_string(channel) + " does not exist", "channel");
      res.set_content(render_slice_png(*v->volume, channel, g), "image/png");
    });
  });

  auto register_model = [&](const std::string& path, bool policy) {
    server.Post(api + path, [this, policy](const Request& req, Response& res) {
      guarded(res, [&] {
        std::string bytes;
        if (is_json(req)) {
          const json body = parse_body(req);
          if (!body.contains("path")) http_fail(400, "bad_request", "expected a path or a model body", "path");
          bytes = read_file(body.at("path").get<std::string>());
        } else {
          bytes = req.body;
        }
        const std::string id = policy ? add_policy(decode_policy(bytes)) : add_surrogate(decode_surrogate(bytes));
        send_json(res, {{"id", id}}, 201);
      });
    });
  };
  register_model("/policies", true);
  register_model("/surrogates", false);

  server.Get(api + "/models", [this](const Request&, Response& res) {
    ordered_json out{{"policies", ordered_json::array()}, {"surrogates", ordered_json::array()}};
    std::lock_guard lock(mutex_);
    for (const auto& [id, _] : policies_) out["policies"].push_back(id);
    for (const auto& [id, _] : surrogates_) out["surrogates"].push_back(id);
    send_json(res, out);
  });

  server.Post(api + "/sessions", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      for (const char* key : {"volume_id", "policy_id", "surrogate_id"})
        if (!body.contains(key) || !body.at(key).is_string())
          http_fail(400, "bad_request", std::string("missing ") + key, key);
      const std::string id = create_session(body.at("volume_id").get<std::string>(),
                                            body.at("policy_id").get<std::string>(),
                                            body.at("surrogate_id").get<std::string>());
      send_json(res, {{"id", id}}, 201);
    });
  });

  server.Get(api + "/sessions/:id", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      ordered_json history = ordered_json::array();
      for (const auto& r : s->engine->history()) history.push_back(to_json(r));
      send_json(res, {{"id", s->id},
                      {"volume_id", s->volume_id},
                      {"policy_id", s->policy_id},
                      {"surrogate_id", s->surrogate_id},
                      {"has_prompt", s->engine->has_prompt()},
                      {"terminal", s->engine->terminal()},
                      {"history", history}});
    });
  });

  server.Delete(api + "/sessions/:id", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      FlightGuard flight(s->busy);
      std::lock_guard lock(mutex_);
      sessions_.erase(s->id);
      res.status = 204;
    });
  });

  server.Post(api + "/sessions/:id/prompt", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      const json body = parse_body(req);
      VoxelIndex v;
      for (auto [key, dst] : {std::pair{"a", &v.a}, std::pair{"b", &v.b}, std::pair{"c", &v.c}}) {
        if (!body.contains(key) || !body.at(key).is_number_integer())
          http_fail(400, "bad_request", std::string("missing integer ") + key, key);
        *dst = body.at(key).get<int>();
      }
      FlightGuard flight(s->busy);
      std::lock_guard lock(s->mutex);
      const StepRecord rec = s->engine->prompt(v);
      send_json(res, {{"step", to_json(rec)}, {"negative", s->engine->negative()}});
    });
  });

  server.Post(api + "/sessions/:id/refine", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      const json body = parse_body(req);
      std::optional<int> steps;
      if (body.contains("steps")) {
        const json& st = body.at("steps");
        if (st.is_string() && st.get<std::string>() == "auto") steps.reset();
        else if (st.is_number_integer()) steps = st.get<int>();
        else http_fail(400, "bad_request", "steps must be an integer or \"auto\"", "steps");
      }
      FlightGuard flight(s->busy);
      std::lock_guard lock(s->mutex);
      if (options_.refine_delay.count() > 0) std::this_thread::sleep_for(options_.refine_delay);
      const auto records = steps ? s->engine->refine(*steps) : s->engine->refine_auto();
      ordered_json out = ordered_json::array();
      for (const auto& r : records) out.push_back(to_json(r));
      send_json(res, {{"steps", out}, {"terminal", s->engine->terminal()}, {"negative", s->engine->negative()}});
    });
  });

  server.Get(api + "/sessions/:id/mask", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      res.set_content(encode_mask(s->engine->mask(), s->engine->env().volume().spacing()), "application/octet-stream");
    });
  });

  server.Get(api + "/sessions/:id/overlay", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      const SliceGeometry g = geometry_from(req, s->engine->env().volume().dims());
      send_json(res, {{"axis", g.axis},
                      {"index", g.index},
                      {"rows", g.rows},
                      {"cols", g.cols},
                      {"runs", mask_rle_rows(s->engine->mask(), g)}});
    });
  });

  server.Get(api + "/sessions/:id/classification", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      std::lock_guard lock(s->mutex);
      const bool negative = s->engine->negative();
      send_json(res, {{"classification", negative ? "negative" : "positive"},
                      {"voxels", count(s->engine->mask())},
                      {"threshold", s->engine->env().config().grow.window_volume()}});
    });
  });

  server.Post(api + "/sessions/:id/reset-prompt", [this](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = session(req.path_params.at("id"));
      FlightGuard flight(s->busy);
      std::lock_guard lock(s->mutex);
      s->engine->reset();
      send_json(res, {{"id", s->id}, {"has_prompt", false}});
    });
  });

  if (!options_.static_dir.empty() && !server.set_mount_point("/", options_.static_dir))
    fail(ErrorKind::kConfig, "static directory does not exist: " + options_.static_dir, "serve.static_dir");
}

}  // namespace seedgrow
