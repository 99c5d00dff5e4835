#include "seedgrow/policy.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "seedgrow/volume_io.hpp"

namespace seedgrow {

namespace {

constexpr double kLeakySlope = 0.01;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

struct Layout {
  Eigen::Index d, h1, h2, hc;
  Eigen::Index w1 = 0, b1, w2, b2, wa, wc, bc, wv, bv, total;

  explicit Layout(const PolicyArch& a)
      : d(a.input_width()), h1(a.hidden1), h2(a.hidden2), hc(a.critic_hidden) {
    b1 = w1 + h1 * d;
    w2 = b1 + h1;
    b2 = w2 + h2 * h1;
    wa = b2 + h2;
    wc = wa + h2;
    bc = wc + hc * h2;
    wv = bc + hc;
    bv = wv + hc;
    total = bv + 1;
  }
};

Eigen::MatrixXd leaky(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}
Eigen::MatrixXd leaky_grad(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
}

struct Forward {
  Eigen::MatrixXd p1, a1, p2, a2;
  Eigen::VectorXd g, pc, ac;
  Eigen::VectorXd logits;
  double value = 0.0;
};

Forward forward(const PolicyParams& params, const Eigen::MatrixXd& x) {
  const Layout L(params.arch);
  const auto& th = params.theta;
  if (x.cols() != L.d || x.rows() != params.arch.cell_count())
    fail(ErrorKind::kData, "encoded state does not match policy architecture", "arch");
  Forward f;
  const ConstMatrixMap w1(th.data() + L.w1, L.h1, L.d);
  const ConstMatrixMap w2(th.data() + L.w2, L.h2, L.h1);
  const ConstMatrixMap wc(th.data() + L.wc, L.hc, L.h2);
  f.p1 = (x * w1.transpose()).rowwise() + th.segment(L.b1, L.h1).transpose();
  f.a1 = leaky(f.p1);
  f.p2 = (f.a1 * w2.transpose()).rowwise() + th.segment(L.b2, L.h2).transpose();
  f.a2 = leaky(f.p2);
  f.logits = f.a2 * th.segment(L.wa, L.h2);
  f.g = f.a2.colwise().mean().transpose();
  f.pc = wc * f.g + th.segment(L.bc, L.hc);
  f.ac = leaky(f.pc);
  f.value = f.ac.dot(th.segment(L.wv, L.hc)) + th[L.bv];
  return f;
}

void backward(const PolicyParams& params, const Forward& f, const Eigen::MatrixXd& x, const Eigen::VectorXd& dlogits,
              double dvalue, Eigen::VectorXd& grad) {
  const Layout L(params.arch);
  const auto& th = params.theta;
  const ConstMatrixMap w2(th.data() + L.w2, L.h2, L.h1);
  const ConstMatrixMap wc(th.data() + L.wc, L.hc, L.h2);
  const auto m = static_cast<double>(x.rows());

  grad.segment(L.wa, L.h2) += f.a2.transpose() * dlogits;
  Eigen::MatrixXd da2 = dlogits * th.segment(L.wa, L.h2).transpose();

  grad.segment(L.wv, L.hc) += dvalue * f.ac;
  grad[L.bv] += dvalue;
  const Eigen::VectorXd dpc = (dvalue * th.segment(L.wv, L.hc)).cwiseProduct(leaky_grad(f.pc));
  MatrixMap(grad.data() + L.wc, L.hc, L.h2) += dpc * f.g.transpose();
  grad.segment(L.bc, L.hc) += dpc;
  const Eigen::VectorXd dg = wc.transpose() * dpc;
  da2.rowwise() += (dg / m).transpose();

  const Eigen::MatrixXd dp2 = da2.cwiseProduct(leaky_grad(f.p2));
  MatrixMap(grad.data() + L.w2, L.h2, L.h1) += dp2.transpose() * f.a1;
  grad.segment(L.b2, L.h2) += dp2.colwise().sum().transpose();
  const Eigen::MatrixXd dp1 = (dp2 * w2).cwiseProduct(leaky_grad(f.p1));
  MatrixMap(grad.data() + L.w1, L.h1, L.d) += dp1.transpose() * x;
  grad.segment(L.b1, L.h1) += dp1.colwise().sum().transpose();
}

}  // namespace

int PolicyArch::param_count() const { return static_cast<int>(Layout(*this).total); }

void PolicyArch::validate() const {
  if (pool_grid < 1) fail(ErrorKind::kConfig, "pool_grid must be >= 1", "policy.pool_grid");
  if (action_grid != pool_grid)
    fail(ErrorKind::kConfig, "action_grid must equal pool_grid for the per-cell actor head", "policy.action_grid");
  if (channels < 1) fail(ErrorKind::kConfig, "channels must be >= 1", "policy.channels");
  if (hidden1 < 1 || hidden2 < 1 || critic_hidden < 1)
    fail(ErrorKind::kConfig, "hidden widths must be >= 1", "policy.hidden");
}

PolicyParams PolicyParams::initial(const PolicyArch& arch, std::uint64_t seed) {
  arch.validate();
  const Layout L(arch);
  PolicyParams p;
  p.arch = arch;
  p.theta = Eigen::VectorXd::Zero(L.total);
  Rng rng(seed);
  auto fill = [&](Eigen::Index offset, Eigen::Index n, Eigen::Index fan_in, double gain) {
    const double s = gain / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < n; ++i) p.theta[offset + i] = rng.uniform(-s, s);
  };
  fill(L.w1, L.h1 * L.d, L.d, 1.0);
  fill(L.w2, L.h2 * L.h1, L.h1, 1.0);
  fill(L.wa, L.h2, L.h2, 0.01);  // near-uniform initial policy
  fill(L.wc, L.hc * L.h2, L.h2, 1.0);
  fill(L.wv, L.hc, L.hc, 0.1);
  p.adam.m = Eigen::VectorXd::Zero(L.total);
  p.adam.v = Eigen::VectorXd::Zero(L.total);
  return p;
}

void PolicyParams::validate() const {
  arch.validate();
  if (theta.size() != arch.param_count()) fail(ErrorKind::kData, "parameter count does not match architecture", "param_count");
  if (!theta.allFinite()) fail(ErrorKind::kNumeric, "policy parameters are not finite", "theta");
  if (adam.m.size() != theta.size() || adam.v.size() != theta.size())
    fail(ErrorKind::kData, "optimiser state does not match parameter count", "adam");
}

EncodedState encode(const Volume& x, const Mask& mask, const PolicyArch& arch) {
  arch.validate();
  require_same_dims(x.dims(), mask.dims(), "encode");
  if (x.channels() != arch.channels)
    fail(ErrorKind::kData, "volume has " + std::to_string(x.channels()) + " channels, policy expects " +
                               std::to_string(arch.channels), "channels");
  const Dims& d = x.dims();
  const int G = arch.pool_grid;
  if (d.h < G || d.w < G || d.d < G) fail(ErrorKind::kData, "volume smaller than the pooling grid", "dims");
  const int C = arch.channels + 1;
  const Dims cell_dims{G, G, G};
  const auto M = static_cast<Eigen::Index>(cell_dims.size());

  // Pooled grid, one column per channel (mask last).
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(M, C);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(M);
  std::vector<int> ia(d.h), ib(d.w), ic(d.d);
  for (int a = 0; a < d.h; ++a) ia[a] = static_cast<int>(static_cast<long>(a) * G / d.h);
  for (int b = 0; b < d.w; ++b) ib[b] = static_cast<int>(static_cast<long>(b) * G / d.w);
  for (int c = 0; c < d.d; ++c) ic[c] = static_cast<int>(static_cast<long>(c) * G / d.d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const VoxelIndex v = d.unflat(i);
    const auto cell = static_cast<Eigen::Index>(cell_dims.flat({ia[v.a], ib[v.b], ic[v.c]}));
    for (int ch = 0; ch < arch.channels; ++ch) pooled(cell, ch) += x.at(ch, i);
    pooled(cell, C - 1) += mask[i];
    counts[cell] += 1.0;
  }
  pooled.array().colwise() /= counts.array();

  EncodedState out{Eigen::MatrixXd(M, 3 * C)};
  out.cells.leftCols(C) = pooled;
  for (Eigen::Index cell = 0; cell < M; ++cell) {
    const Window w = Window::clipped(cell_dims, cell_dims.unflat(static_cast<std::size_t>(cell)), {1, 1, 1});
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(C);
    for (int a = w.a0; a < w.a1; ++a)
      for (int b = w.b0; b < w.b1; ++b)
        for (int c = w.c0; c < w.c1; ++c) acc += pooled.row(static_cast<Eigen::Index>(cell_dims.flat({a, b, c})));
    out.cells.block(cell, C, 1, C) = acc / static_cast<double>(w.count());
  }
  out.cells.rightCols(C).rowwise() = pooled.colwise().mean();
  return out;
}

EncodedState encode(const EnvState& state, const PolicyArch& arch) {
  if (!state.volume || !state.mask) fail(ErrorKind::kData, "state has no volume or mask", "state");
  return encode(*state.volume, *state.mask, arch);
}

ActionDistribution ActionDistribution::from_logits(Eigen::VectorXd logits) {
  ActionDistribution d;
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  d.log_probs = logits.array() - lse;
  d.probs = d.log_probs.array().exp();
  d.logits = std::move(logits);
  return d;
}

int ActionDistribution::greedy() const {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

int ActionDistribution::sample(Rng& rng) const {
  const double u = rng.uniform();
  double cum = 0.0;
  int last_positive = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = static_cast<int>(i);
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  return last_positive;
}

double ActionDistribution::entropy() const {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) h -= probs[i] * log_probs[i];
  return h;
}

PolicyOutput evaluate(const PolicyParams& params, const EncodedState& input) {
  Forward f = forward(params, input.cells);
  return {ActionDistribution::from_logits(std::move(f.logits)), f.value};
}

VoxelIndex cell_centre(int cell, const Dims& dims, int action_grid) {
  const Dims cells{action_grid, action_grid, action_grid};
  if (cell < 0 || static_cast<std::size_t>(cell) >= cells.size())
    fail(ErrorKind::kData, "action cell out of range", "cell");
  const VoxelIndex c = cells.unflat(static_cast<std::size_t>(cell));
  const long g2 = 2L * action_grid;
  return {static_cast<int>((2L * c.a + 1) * dims.h / g2), static_cast<int>((2L * c.b + 1) * dims.w / g2),
          static_cast<int>((2L * c.c + 1) * dims.d / g2)};
}

ActResult act(const EnvState& state, const PolicyParams& params, Rng& rng, ActMode mode) {
  const PolicyOutput out = evaluate(params, encode(state, params.arch));
  ActResult r;
  r.cell = mode == ActMode::kGreedy ? out.dist.greedy() : out.dist.sample(rng);
  r.log_prob = out.dist.log_probs[r.cell];
  r.value = out.value;
  r.action = cell_centre(r.cell, state.volume->dims(), params.arch.action_grid);
  return r;
}

PolicyFn as_policy_fn(const PolicyParams& params, ActMode mode) {
  return [&params, mode](const EnvState& s, Rng& rng) {
    const ActResult r = act(s, params, rng, mode);
    return PolicyChoice{r.action, r.cell, r.log_prob, r.value};
  };
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

Eigen::VectorXd ppo_gradient(const PolicyParams& params, std::span<const PpoSample> batch, const PpoLossConfig& cfg,
                             PpoLoss* loss_out) {
  if (batch.empty()) fail(ErrorKind::kData, "empty PPO batch", "batch");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.theta.size());
  PpoLoss loss;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const Forward f = forward(params, s.input.cells);
    const ActionDistribution dist = ActionDistribution::from_logits(f.logits);
    const double ratio = std::exp(dist.log_probs[s.cell] - s.old_log_prob);
    const double unclipped = ratio * s.advantage;
    const double surrogate = clipped_surrogate(ratio, s.advantage, cfg.clip_eps);
    const double entropy = dist.entropy();
    const double value_err = f.value - s.target_return;

    loss.policy -= surrogate * inv_n;
    loss.value += value_err * value_err * inv_n;
    loss.entropy += entropy * inv_n;
    if (std::abs(ratio - 1.0) > cfg.clip_eps) loss.clip_fraction += inv_n;

    Eigen::VectorXd dlogits = Eigen::VectorXd::Zero(dist.probs.size());
    if (unclipped <= surrogate) {
      // d(-r A)/dz = -A r (onehot - pi)
      dlogits = s.advantage * ratio * dist.probs;
      dlogits[s.cell] -= s.advantage * ratio;
    }
    // d(-c H)/dz_j = c pi_j (log pi_j + H)
    dlogits += cfg.entropy_coef * dist.probs.cwiseProduct((dist.log_probs.array() + entropy).matrix());
    dlogits *= inv_n;
    const double dvalue = 2.0 * cfg.value_coef * value_err * inv_n;
    backward(params, f, s.input.cells, dlogits, dvalue, grad);
  }
  loss.total = loss.policy + cfg.value_coef * loss.value - cfg.entropy_coef * loss.entropy;
  if (loss_out) *loss_out = loss;
  return grad;
}

PpoLoss ppo_loss(const PolicyParams& params, std::span<const PpoSample> batch, const PpoLossConfig& cfg) {
  if (batch.empty()) fail(ErrorKind::kData, "empty PPO batch", "batch");
  PpoLoss loss;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const PolicyOutput out = evaluate(params, s.input);
    const double ratio = std::exp(out.dist.log_probs[s.cell] - s.old_log_prob);
    const double value_err = out.value - s.target_return;
    loss.policy -= clipped_surrogate(ratio, s.advantage, cfg.clip_eps) * inv_n;
    loss.value += value_err * value_err * inv_n;
    loss.entropy += out.dist.entropy() * inv_n;
    if (std::abs(ratio - 1.0) > cfg.clip_eps) loss.clip_fraction += inv_n;
  }
  loss.total = loss.policy + cfg.value_coef * loss.value - cfg.entropy_coef * loss.entropy;
  return loss;
}

std::string encode_policy(const PolicyParams& params) {
  params.validate();
  const auto& a = params.arch;
  nlohmann::ordered_json h;
  h["magic"] = "PPM1";
  h["arch"] = {{"pool_grid", a.pool_grid},         {"action_grid", a.action_grid}, {"channels", a.channels},
               {"hidden1", a.hidden1},             {"hidden2", a.hidden2},         {"critic_hidden", a.critic_hidden}};
  h["param_count"] = params.theta.size();
  h["optimiser"] = {{"kind", "adam"}, {"step", params.adam.step}};
  h["payload"] = {"theta", "adam_m", "adam_v"};
  h["dtype"] = "f32le";
  std::string out = h.dump() + "\n";
  for (const Eigen::VectorXd* vec : {&params.theta, &params.adam.m, &params.adam.v})
    for (Eigen::Index i = 0; i < vec->size(); ++i) append_f32le(out, static_cast<float>((*vec)[i]));
  return out;
}

PolicyParams decode_policy(std::string_view bytes) {
  std::string_view payload;
  const auto text = split_header(bytes, payload);
  PolicyParams p;
  std::size_t n = 0;
  try {
    const auto h = nlohmann::json::parse(text);
    if (h.at("magic") != "PPM1") fail(ErrorKind::kData, "bad magic", "magic");
    if (h.at("dtype") != "f32le") fail(ErrorKind::kData, "unsupported dtype", "dtype");
    const auto& a = h.at("arch");
    p.arch = {a.at("pool_grid").get<int>(), a.at("action_grid").get<int>(), a.at("channels").get<int>(),
              a.at("hidden1").get<int>(),   a.at("hidden2").get<int>(),     a.at("critic_hidden").get<int>()};
    p.arch.validate();
    n = h.at("param_count").get<std::size_t>();
    if (static_cast<int>(n) != p.arch.param_count())
      fail(ErrorKind::kData, "param_count does not match architecture", "param_count");
    p.adam.step = h.at("optimiser").at("step").get<long>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed policy header: ") + e.what(), "header");
  }
  if (payload.size() != 3 * 4 * n) fail(ErrorKind::kData, "payload size does not match param_count", "param_count");
  const char* ptr = payload.data();
  for (Eigen::VectorXd* vec : {&p.theta, &p.adam.m, &p.adam.v}) {
    vec->resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i, ptr += 4) (*vec)[static_cast<Eigen::Index>(i)] = load_f32le(ptr);
  }
  p.validate();
  return p;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params) { write_file(path, encode_policy(params)); }
PolicyParams load_policy(const std::filesystem::path& path) { return decode_policy(read_file(path)); }

}  // namespace seedgrow
