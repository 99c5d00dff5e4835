#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "seedgrow/env.hpp"
#include "seedgrow/inference.hpp"
#include "seedgrow/policy.hpp"
#include "seedgrow/surrogate.hpp"

namespace httplib {
class Server;
}

namespace seedgrow {

struct ServiceOptions {
  EnvConfig env;  // horizon and grow settings used by every session
  std::chrono::seconds session_ttl{1800};
  std::string static_dir;  // served at "/" when nonempty
  /// Artificial delay inside refine; lets tests observe the single-flight rule.
  std::chrono::milliseconds refine_delay{0};
  std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
};

/// Which image rows and columns a slice along `axis` shows: axis a gives rows
/// b and columns c; axis b gives rows a, columns c; axis c gives rows a,
/// columns b.
struct SliceGeometry {
  int axis = 0;
  int index = 0;
  int rows = 0;
  int cols = 0;
  VoxelIndex voxel(int row, int col) const;
};

SliceGeometry slice_geometry(const Dims& dims, int axis, int index);

/// Window [0, 1] mapped to 0..255, rounded, clamped.
std::string render_slice_png(const Volume& x, int channel, const SliceGeometry& g);

/// Runs of set voxels per image row as flat [start, length, ...] lists.
std::vector<std::vector<int>> mask_rle_rows(const Mask& m, const SliceGeometry& g);

/// In-memory registry of volumes, models and prompt sessions behind the
/// /api/v1 routes. Thread-safe; refinement is single-flight per session.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();

  std::string add_volume(Volume volume, std::optional<Mask> truth = std::nullopt);
  std::string add_surrogate(SurrogateParams params);
  std::string add_policy(PolicyParams params);

  /// Registers every route on `server`.
  void bind(httplib::Server& server);

  /// Drops idle sessions older than the TTL. Returns how many were removed.
  std::size_t evict_expired();
  std::size_t session_count() const;

 private:
  struct VolumeEntry;
  struct Session;

  std::shared_ptr<VolumeEntry> volume(const std::string& id) const;
  std::shared_ptr<Session> session(const std::string& id) const;
  std::shared_ptr<const SegmentationEnv> env_for(const std::shared_ptr<VolumeEntry>& v, const std::string& surrogate_id);
  std::string create_session(const std::string& volume_id, const std::string& policy_id,
                             const std::string& surrogate_id);
  std::string next_id(const char* prefix);

  ServiceOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<VolumeEntry>> volumes_;
  std::map<std::string, std::shared_ptr<const SurrogateParams>> surrogates_;
  std::map<std::string, std::shared_ptr<const PolicyParams>> policies_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::pair<std::string, std::string>, std::shared_ptr<const SegmentationEnv>> env_cache_;
  std::uint64_t counter_ = 0;
};

}  // namespace seedgrow
