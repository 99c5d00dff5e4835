#include "seedgrow/env.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "seedgrow/volume_io.hpp"

namespace seedgrow {

void EnvConfig::validate() const {
  if (!std::isfinite(beta) || beta < 0.0) fail(ErrorKind::kConfig, "beta must be finite and >= 0", "env.beta");
  if (horizon < 1) fail(ErrorKind::kConfig, "horizon must be >= 1", "env.horizon");
  grow.validate();
}

double mean_entropy(const Mask& mask, const EntropyField& entropy) {
  require_same_dims(mask.dims(), entropy.dims(), "mean_entropy");
  const std::size_t n = count(mask);
  if (n == 0) return 0.0;
  return (mask.array().cast<double>() * entropy.array()).sum() / static_cast<double>(n);
}

RewardTerms reward_of(const Mask& y_t, const Mask& y_next, const Mask& truth, const EntropyField& entropy,
                      double beta) {
  RewardTerms r;
  r.dice = dice_loss(y_t, truth) - dice_loss(y_next, truth);
  r.entropy = beta * mean_entropy(y_next, entropy);
  r.total = r.dice + r.entropy;
  return r;
}

SegmentationEnv::SegmentationEnv(std::shared_ptr<const Volume> volume, EntropyField entropy,
                                 std::optional<Mask> truth, EnvConfig cfg)
    : volume_(std::move(volume)), entropy_(std::move(entropy)), truth_(std::move(truth)), cfg_(cfg) {
  cfg_.validate();
  if (!volume_) fail(ErrorKind::kData, "environment needs a volume", "volume");
  require_same_dims(volume_->dims(), entropy_.dims(), "environment entropy");
  if (truth_) require_same_dims(volume_->dims(), truth_->dims(), "environment truth");
  admissible_ = admissible_set(*volume_, entropy_, cfg_.grow);
}

SegmentationEnv SegmentationEnv::from_surrogate(std::shared_ptr<const Volume> volume, const SurrogateParams& surrogate,
                                                std::optional<Mask> truth, EnvConfig cfg) {
  EntropyField e = entropy_of(*volume, surrogate);
  return SegmentationEnv(std::move(volume), std::move(e), std::move(truth), cfg);
}

GrowResult SegmentationEnv::grow_from(const VoxelIndex& seed) const { return grow(admissible_, seed, cfg_.grow); }

EnvState SegmentationEnv::reset(const VoxelIndex& initial_seed) const {
  if (!volume_->dims().contains(initial_seed))
    fail(ErrorKind::kData, "initial seed " + to_string(initial_seed) + " outside grid", "seed");
  EnvState s;
  s.volume = volume_;
  s.mask = std::make_shared<const Mask>(grow_from(initial_seed).mask);
  return s;
}

Transition SegmentationEnv::step(const EnvState& state, const VoxelIndex& action) const {
  if (state.terminal) fail(ErrorKind::kData, "cannot step a terminal state", "state");
  if (!volume_->dims().contains(action))
    fail(ErrorKind::kData, "action " + to_string(action) + " outside grid", "action");
  Transition tr;
  tr.state = state;
  tr.action = action;
  auto next = std::make_shared<const Mask>(grow_from(action).mask);
  if (truth_) {
    const RewardTerms r = reward_of(*state.mask, *next, *truth_, entropy_, cfg_.beta);
    tr.dice_reward = r.dice;
    tr.entropy_bonus = r.entropy;
    tr.reward = r.total;
  }
  const bool stable = mask_l1_diff(*state.mask, *next) == 0;
  tr.next_state.volume = volume_;
  tr.next_state.mask = std::move(next);
  tr.next_state.step_index = state.step_index + 1;
  tr.done = stable || tr.next_state.step_index >= cfg_.horizon;
  tr.next_state.terminal = tr.done;
  return tr;
}

std::vector<Transition> rollout(const SegmentationEnv& env, const VoxelIndex& initial_seed, const PolicyFn& policy,
                                std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  std::vector<Transition> episode;
  EnvState s = env.reset(initial_seed);
  while (!s.terminal) {
    const PolicyChoice choice = policy(s, rng);
    Transition tr = env.step(s, choice.action);
    tr.action_cell = choice.cell;
    tr.log_prob = choice.log_prob;
    tr.value = choice.value;
    s = tr.next_state;
    episode.push_back(std::move(tr));
  }
  return episode;
}

double discounted_return(std::span<const Transition> episode, double gamma) {
  double total = 0.0, discount = 1.0;
  for (const auto& tr : episode) {
    total += discount * tr.reward;
    discount *= gamma;
  }
  return total;
}

namespace {

void append_bits(std::string& out, const Mask& m) {
  const std::size_t start = out.size();
  out.resize(start + (m.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) out[start + i / 8] = static_cast<char>(static_cast<unsigned char>(out[start + i / 8]) | (1u << (i % 8)));
}

Mask load_bits(const char*& p, const Dims& dims) {
  Mask m(dims);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (static_cast<unsigned char>(p[i / 8]) >> (i % 8)) & 1u;
  p += (m.size() + 7) / 8;
  return m;
}

template <typename T>
void append_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

template <typename T>
T load_le(const char*& p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  p += sizeof(T);
  return std::bit_cast<T>(bits);
}

constexpr std::size_t kRecordBytes = 5 * 4 + 1 + 5 * 8;

}  // namespace

std::string encode_episode(std::span<const Transition> episode) {
  if (episode.empty()) fail(ErrorKind::kData, "cannot encode an empty episode", "episode");
  const Dims dims = episode.front().state.mask->dims();
  nlohmann::ordered_json h;
  h["magic"] = "EPL1";
  h["dims"] = {dims.h, dims.w, dims.d};
  h["count"] = episode.size();
  h["record_bytes"] = kRecordBytes;
  std::string out = h.dump() + "\n";
  append_bits(out, *episode.front().state.mask);
  for (const auto& tr : episode) {
    append_le<std::int32_t>(out, tr.action.a);
    append_le<std::int32_t>(out, tr.action.b);
    append_le<std::int32_t>(out, tr.action.c);
    append_le<std::int32_t>(out, tr.action_cell);
    append_le<std::int32_t>(out, tr.state.step_index);
    out.push_back(tr.done ? 1 : 0);
    append_le<double>(out, tr.reward);
    append_le<double>(out, tr.dice_reward);
    append_le<double>(out, tr.entropy_bonus);
    append_le<double>(out, tr.log_prob);
    append_le<double>(out, tr.value);
    append_bits(out, *tr.next_state.mask);
  }
  return out;
}

std::vector<Transition> decode_episode(std::string_view bytes) {
  std::string_view payload;
  const auto text = split_header(bytes, payload);
  Dims dims;
  std::size_t n = 0;
  try {
    const auto h = nlohmann::json::parse(text);
    if (h.at("magic") != "EPL1") fail(ErrorKind::kData, "bad magic", "magic");
    const auto& d = h.at("dims");
    dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
    n = h.at("count").get<std::size_t>();
    if (h.at("record_bytes").get<std::size_t>() != kRecordBytes)
      fail(ErrorKind::kData, "unsupported record size", "record_bytes");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed episode header: ") + e.what(), "header");
  }
  if (!dims.valid()) fail(ErrorKind::kData, "dims must be positive", "dims");
  const std::size_t mask_bytes = (dims.size() + 7) / 8;
  if (payload.size() != mask_bytes + n * (kRecordBytes + mask_bytes))
    fail(ErrorKind::kData, "payload size does not match count and dims", "count");

  const char* p = payload.data();
  std::vector<Transition> out;
  EnvState state;
  state.mask = std::make_shared<const Mask>(load_bits(p, dims));
  for (std::size_t i = 0; i < n; ++i) {
    Transition tr;
    tr.action.a = load_le<std::int32_t>(p);
    tr.action.b = load_le<std::int32_t>(p);
    tr.action.c = load_le<std::int32_t>(p);
    tr.action_cell = load_le<std::int32_t>(p);
    state.step_index = load_le<std::int32_t>(p);
    tr.done = *p++ != 0;
    tr.reward = load_le<double>(p);
    tr.dice_reward = load_le<double>(p);
    tr.entropy_bonus = load_le<double>(p);
    tr.log_prob = load_le<double>(p);
    tr.value = load_le<double>(p);
    tr.state = state;
    tr.next_state.mask = std::make_shared<const Mask>(load_bits(p, dims));
    tr.next_state.step_index = state.step_index + 1;
    tr.next_state.terminal = tr.done;
    state = tr.next_state;
    out.push_back(std::move(tr));
  }
  return out;
}

void write_episode(const std::filesystem::path& path, std::span<const Transition> episode) {
  write_file(path, encode_episode(episode));
}

std::vector<Transition> read_episode(const std::filesystem::path& path) { return decode_episode(read_file(path)); }

}  // namespace seedgrow
