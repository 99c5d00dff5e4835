#include "seedgrow/ppo.hpp"

#include <cmath>
#include <numeric>

namespace seedgrow {

void PpoConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "learning_rate must be positive", "ppo.learning_rate");
  if (!(gamma >= 0.0 && gamma < 1.0)) fail(ErrorKind::kConfig, "gamma must lie in [0, 1)", "ppo.gamma");
  if (!(clip_eps > 0.0)) fail(ErrorKind::kConfig, "clip_eps must be positive", "ppo.clip_eps");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail(ErrorKind::kConfig, "gae_lambda must lie in [0, 1]", "ppo.gae_lambda");
  if (entropy_coef < 0.0 || value_coef < 0.0) fail(ErrorKind::kConfig, "loss coefficients must be >= 0", "ppo");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be >= 1", "ppo.batch_size");
  if (total_steps < 1) fail(ErrorKind::kConfig, "total_steps must be >= 1", "ppo.total_steps");
  if (updates_per_batch < 1) fail(ErrorKind::kConfig, "updates_per_batch must be >= 1", "ppo.updates_per_batch");
  if (minibatch_size < 1) fail(ErrorKind::kConfig, "minibatch_size must be >= 1", "ppo.minibatch_size");
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double bootstrap,
                        double gamma, double lambda) {
  if (rewards.size() != values.size()) fail(ErrorKind::kData, "rewards and values differ in length", "values");
  std::vector<double> adv(rewards.size());
  double running = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    const double next_value = k + 1 < values.size() ? values[k + 1] : bootstrap;
    const double delta = rewards[k] + gamma * next_value - values[k];
    running = delta + gamma * lambda * running;
    adv[k] = running;
  }
  return adv;
}

PolicyParams ppo_update(const PolicyParams& params, std::span<const std::vector<Transition>> episodes,
                        const PpoConfig& cfg, std::uint64_t rng_seed, UpdateStats* stats) {
  cfg.validate();
  params.validate();
  std::vector<PpoSample> samples;
  for (const auto& ep : episodes) {
    if (ep.empty()) continue;
    std::vector<double> rewards, values;
    for (const auto& tr : ep) {
      rewards.push_back(tr.reward);
      values.push_back(tr.value);
    }
    const double bootstrap = 0.0;  // episodes always end in a terminal state
    const std::vector<double> adv = gae(rewards, values, bootstrap, cfg.gamma, cfg.gae_lambda);
    for (std::size_t t = 0; t < ep.size(); ++t) {
      if (ep[t].action_cell < 0) fail(ErrorKind::kData, "transition lacks policy bookkeeping", "action_cell");
      samples.push_back({encode(ep[t].state, params.arch), ep[t].action_cell, ep[t].log_prob, adv[t], adv[t] + values[t]});
    }
  }
  if (samples.empty()) fail(ErrorKind::kData, "PPO update needs a nonempty buffer", "episodes");

  if (cfg.normalize_advantages && samples.size() > 1) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.advantage;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean);
    const double sd = std::sqrt(var / static_cast<double>(samples.size()));
    for (auto& s : samples) s.advantage = sd < 1e-8 ? s.advantage - mean : (s.advantage - mean) / sd;
  }

  PolicyParams out = params;
  Rng rng(rng_seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<PpoSample> mini;
  const std::size_t mb = static_cast<std::size_t>(cfg.minibatch_size);
  UpdateStats local;
  local.samples = samples.size();

  for (int epoch = 0; epoch < cfg.updates_per_batch; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    PpoLoss epoch_loss;
    int minibatches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += mb) {
      mini.clear();
      for (std::size_t i = begin; i < std::min(order.size(), begin + mb); ++i) mini.push_back(samples[order[i]]);
      PpoLoss loss;
      Eigen::VectorXd g = ppo_gradient(out, mini, cfg.loss(), &loss);
      if (!std::isfinite(loss.total) || !g.allFinite())
        fail(ErrorKind::kNumeric,
             "PPO loss is not finite (epoch " + std::to_string(epoch) + ", minibatch at " + std::to_string(begin) +
                 ", policy " + std::to_string(loss.policy) + ", value " + std::to_string(loss.value) + ")",
             "ppo");
      const double norm = g.norm();
      local.grad_norm = norm;
      if (cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm) g *= cfg.max_grad_norm / norm;

      auto& adam = out.adam;
      ++adam.step;
      adam.m = cfg.adam_beta1 * adam.m + (1.0 - cfg.adam_beta1) * g;
      adam.v = cfg.adam_beta2 * adam.v + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(adam.step));
      out.theta.array() -= cfg.learning_rate * (adam.m.array() / c1) / ((adam.v.array() / c2).sqrt() + cfg.adam_eps);

      epoch_loss.total += loss.total;
      epoch_loss.policy += loss.policy;
      epoch_loss.value += loss.value;
      epoch_loss.entropy += loss.entropy;
      epoch_loss.clip_fraction += loss.clip_fraction;
      ++minibatches;
    }
    const double k = 1.0 / minibatches;
    local.loss = {epoch_loss.total * k, epoch_loss.policy * k, epoch_loss.value * k, epoch_loss.entropy * k,
                  epoch_loss.clip_fraction * k};
  }
  if (stats) *stats = local;
  return out;
}

std::vector<Case> make_cases(std::span<const PhantomSample> samples, const SurrogateParams& surrogate) {
  std::vector<Case> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto vol = std::make_shared<const Volume>(s.volume);
    out.push_back({vol, entropy_of(*vol, surrogate), s.truth, &s});
  }
  return out;
}

std::vector<Case> make_cases(std::span<const PhantomSample> samples, const SurrogateParams& surrogate,
                             std::span<const int> channels) {
  std::vector<Case> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto vol = std::make_shared<const Volume>(s.volume.select_channels(channels));
    out.push_back({vol, entropy_of(*vol, surrogate), s.truth, &s});
  }
  return out;
}

VoxelIndex start_seed(const PhantomSample& sample, StartMode mode, std::uint64_t rng_seed) {
  if (mode == StartMode::kGlandCentre) return gland_centre_seed(sample);
  if (count(sample.truth) == 0) return sample_seed_in_gland(sample, rng_seed);
  return sample_seed_in_lesion(sample, rng_seed);
}

PolicyParams train_agent(std::span<const Case> cases, const PolicyArch& arch, const AgentTrainConfig& cfg,
                         const TrainCallback& on_update) {
  cfg.ppo.validate();
  cfg.env.validate();
  if (cases.empty()) fail(ErrorKind::kData, "agent training set is empty", "dataset");
  std::vector<SegmentationEnv> envs;
  envs.reserve(cases.size());
  for (const auto& c : cases) {
    if (!c.sample) fail(ErrorKind::kData, "training case lacks its phantom sample", "dataset");
    envs.emplace_back(c.volume, c.entropy, c.truth, cfg.env);
  }

  PolicyParams params = PolicyParams::initial(arch, derive_seed(cfg.rng_seed, 11));
  Rng rng(derive_seed(cfg.rng_seed, 12));
  long steps = 0;
  int update = 0;
  while (steps < cfg.ppo.total_steps) {
    std::vector<std::vector<Transition>> buffer;
    std::size_t collected = 0;
    double return_sum = 0.0, dice_sum = 0.0;
    while (collected < static_cast<std::size_t>(cfg.ppo.batch_size)) {
      const std::size_t k = rng.below(envs.size());
      const VoxelIndex seed = start_seed(*cases[k].sample, cfg.start, rng.next_u64());
      auto episode = rollout(envs[k], seed, as_policy_fn(params, ActMode::kSample), rng.next_u64());
      collected += episode.size();
      return_sum += discounted_return(episode, cfg.ppo.gamma);
      dice_sum += 1.0 - dice_loss(*episode.back().next_state.mask, cases[k].truth);
      buffer.push_back(std::move(episode));
    }
    steps += static_cast<long>(collected);

    TrainLogRecord rec;
    params = ppo_update(params, buffer, cfg.ppo, rng.next_u64(), &rec.stats);
    rec.update = ++update;
    rec.steps = steps;
    rec.episodes = buffer.size();
    rec.mean_return = return_sum / static_cast<double>(buffer.size());
    rec.mean_final_dice = dice_sum / static_cast<double>(buffer.size());
    if (on_update) on_update(rec, params);
  }
  params.theta = params.theta.cast<float>().cast<double>();
  params.adam.m = params.adam.m.cast<float>().cast<double>();
  params.adam.v = params.adam.v.cast<float>().cast<double>();
  return params;
}

}  // namespace seedgrow
