#include "seedgrow/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "seedgrow/rng.hpp"
#include "seedgrow/volume_io.hpp"

namespace seedgrow {

namespace {

constexpr double kProbFloor = 1e-15;

const char* to_string(FeatureSet s) { return s == FeatureSet::kRaw ? "raw" : "full"; }

FeatureSet feature_set_from(const std::string& s) {
  if (s == "raw") return FeatureSet::kRaw;
  if (s == "full") return FeatureSet::kFull;
  fail(ErrorKind::kData, "unknown feature set '" + s + "'", "arch.features");
}

void local_mean_std(const Volume& x, int ch, int r, Eigen::Ref<Eigen::VectorXd> mean, Eigen::Ref<Eigen::VectorXd> sd) {
  const Dims& d = x.dims();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Window w = Window::clipped(d, d.unflat(i), {r, r, r});
    double s = 0.0, ss = 0.0;
    for (int a = w.a0; a < w.a1; ++a)
      for (int b = w.b0; b < w.b1; ++b) {
        const std::size_t row = d.flat({a, b, 0});
        for (int c = w.c0; c < w.c1; ++c) {
          const double v = x.at(ch, row + c);
          s += v;
          ss += v * v;
        }
      }
    const double n = static_cast<double>(w.count());
    const double m = s / n;
    mean[static_cast<Eigen::Index>(i)] = m;
    sd[static_cast<Eigen::Index>(i)] = std::sqrt(std::max(0.0, ss / n - m * m));
  }
}

double axis_derivative(const Volume& x, int ch, VoxelIndex v, int axis) {
  const Dims& d = x.dims();
  const int extent = axis == 0 ? d.h : axis == 1 ? d.w : d.d;
  int& coord = axis == 0 ? v.a : axis == 1 ? v.b : v.c;
  const int centre = coord;
  if (extent == 1) return 0.0;
  const int lo = std::max(0, centre - 1), hi = std::min(extent - 1, centre + 1);
  coord = hi;
  const double fhi = x.at(ch, v);
  coord = lo;
  const double flo = x.at(ch, v);
  return (fhi - flo) / (hi - lo);
}

struct Layout {
  int f, h;
  Eigen::Index w1() const { return 0; }
  Eigen::Index b1() const { return static_cast<Eigen::Index>(h) * f; }
  Eigen::Index w2() const { return b1() + h; }
  Eigen::Index b2() const { return w2() + h; }
};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Forward pass returning the unclamped probabilities and, for the hidden
// model, the hidden activations.
Eigen::VectorXd forward(const Eigen::MatrixXd& feats, const SurrogateParams& params, Eigen::MatrixXd* hidden_out) {
  const int f = params.arch.feature_count();
  const int h = params.arch.hidden;
  const auto& th = params.theta;
  Eigen::VectorXd z;
  if (h == 0) {
    z = (feats * th.head(f)).array() + th[f];
  } else {
    const Layout L{f, h};
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w1(th.data(), h, f);
    Eigen::MatrixXd hid = (feats * w1.transpose()).rowwise() + th.segment(L.b1(), h).transpose();
    hid = hid.array().tanh();
    z = (hid * th.segment(L.w2(), h)).array() + th[L.b2()];
    if (hidden_out) *hidden_out = std::move(hid);
  }
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

struct DiceTerms {
  double intersection, sum_p, sum_t;
};

DiceTerms dice_terms(const Eigen::VectorXd& p, const Mask& truth) {
  const Eigen::VectorXd t = truth.array().cast<double>().matrix();
  return {p.dot(t), p.sum(), t.sum()};
}

double soft_dice(const DiceTerms& d) {
  return 1.0 - (2.0 * d.intersection + kDiceSmoothing) / (d.sum_p + d.sum_t + kDiceSmoothing);
}

}  // namespace

int SurrogateArch::feature_count() const {
  return features == FeatureSet::kRaw ? channels : 6 * channels + 3;
}

int SurrogateArch::param_count() const {
  const int f = feature_count();
  return hidden == 0 ? f + 1 : hidden * f + 2 * hidden + 1;
}

SurrogateParams SurrogateParams::zeros(const SurrogateArch& arch) {
  if (arch.channels < 1 || arch.hidden < 0) fail(ErrorKind::kConfig, "invalid surrogate architecture", "surrogate.arch");
  SurrogateParams p;
  p.arch = arch;
  p.theta = Eigen::VectorXd::Zero(arch.param_count());
  return p;
}

SurrogateParams SurrogateParams::initial(const SurrogateArch& arch, std::uint64_t seed) {
  SurrogateParams p = zeros(arch);
  Rng rng(seed);
  const int f = arch.feature_count();
  if (arch.hidden == 0) {
    const double s = 1.0 / std::sqrt(static_cast<double>(f));
    for (int i = 0; i < f; ++i) p.theta[i] = rng.uniform(-s, s);
  } else {
    const Layout L{f, arch.hidden};
    const double s1 = 1.0 / std::sqrt(static_cast<double>(f));
    for (Eigen::Index i = 0; i < L.b1(); ++i) p.theta[i] = rng.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    for (int i = 0; i < arch.hidden; ++i) p.theta[L.w2() + i] = rng.uniform(-s2, s2);
  }
  return p;
}

void SurrogateParams::validate() const {
  if (theta.size() != arch.param_count())
    fail(ErrorKind::kData, "parameter count does not match architecture", "param_count");
  if (!theta.allFinite()) fail(ErrorKind::kNumeric, "surrogate parameters are not finite", "theta");
}

FeatureStack featurize(const Volume& x, FeatureSet set) {
  const Dims& d = x.dims();
  const auto n = static_cast<Eigen::Index>(d.size());
  const int C = x.channels();
  SurrogateArch arch{set, C, 0};
  FeatureStack out{d, Eigen::MatrixXd(n, arch.feature_count())};
  for (int ch = 0; ch < C; ++ch) out.planes.col(ch) = x.channel(ch).cast<double>().matrix();
  if (set == FeatureSet::kRaw) return out;

  for (int ch = 0; ch < C; ++ch) {
    const int base = C + 5 * ch;
    local_mean_std(x, ch, 1, out.planes.col(base), out.planes.col(base + 1));
    local_mean_std(x, ch, 2, out.planes.col(base + 2), out.planes.col(base + 3));
    for (std::size_t i = 0; i < d.size(); ++i) {
      const VoxelIndex v = d.unflat(i);
      const double ga = axis_derivative(x, ch, v, 0);
      const double gb = axis_derivative(x, ch, v, 1);
      const double gc = axis_derivative(x, ch, v, 2);
      out.planes(static_cast<Eigen::Index>(i), base + 4) = std::sqrt(ga * ga + gb * gb + gc * gc);
    }
  }
  const int pos = 6 * C;
  auto norm = [](int v, int extent) { return extent > 1 ? 2.0 * v / (extent - 1) - 1.0 : 0.0; };
  for (std::size_t i = 0; i < d.size(); ++i) {
    const VoxelIndex v = d.unflat(i);
    const auto row = static_cast<Eigen::Index>(i);
    out.planes(row, pos) = norm(v.a, d.h);
    out.planes(row, pos + 1) = norm(v.b, d.w);
    out.planes(row, pos + 2) = norm(v.c, d.d);
  }
  return out;
}

ProbabilityField predict(const FeatureStack& features, const SurrogateParams& params) {
  params.validate();
  if (features.planes.cols() != params.arch.feature_count())
    fail(ErrorKind::kData, "feature stack does not match surrogate architecture", "arch");
  Eigen::VectorXd p = forward(features.planes, params, nullptr);
  ProbabilityField out(features.dims, p.array().min(1.0 - kProbFloor).max(kProbFloor));
  return out;
}

ProbabilityField predict(const Volume& x, const SurrogateParams& params) {
  if (x.channels() != params.arch.channels)
    fail(ErrorKind::kData, "volume has " + std::to_string(x.channels()) + " channels, surrogate expects " +
                               std::to_string(params.arch.channels), "channels");
  return predict(featurize(x, params.arch.features), params);
}

EntropyField entropy_of(const Volume& x, const SurrogateParams& params) { return entropy_map(predict(x, params)); }

double batch_loss(const SurrogateParams& params, std::span<const SurrogateExample> batch) {
  if (batch.empty()) fail(ErrorKind::kData, "empty batch", "batch");
  double total = 0.0;
  for (const auto& ex : batch) total += soft_dice(dice_terms(forward(ex.features.planes, params, nullptr), ex.truth));
  return total / static_cast<double>(batch.size());
}

Eigen::VectorXd gradient(const SurrogateParams& params, std::span<const SurrogateExample> batch) {
  if (batch.empty()) fail(ErrorKind::kData, "empty batch", "batch");
  const int f = params.arch.feature_count();
  const int h = params.arch.hidden;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.theta.size());
  for (const auto& ex : batch) {
    require_same_dims(ex.features.dims, ex.truth.dims(), "surrogate gradient");
    Eigen::MatrixXd hid;
    const Eigen::VectorXd p = forward(ex.features.planes, params, &hid);
    const DiceTerms d = dice_terms(p, ex.truth);
    const double denom = d.sum_p + d.sum_t + kDiceSmoothing;
    const double numer = 2.0 * d.intersection + kDiceSmoothing;
    // dL/dp_i = -(2 t_i denom - numer) / denom^2
    const Eigen::ArrayXd t = ex.truth.array().cast<double>();
    const Eigen::ArrayXd dl_dp = -(2.0 * t * denom - numer) / (denom * denom);
    const Eigen::VectorXd dz = (dl_dp * p.array() * (1.0 - p.array())).matrix();
    if (h == 0) {
      grad.head(f) += ex.features.planes.transpose() * dz;
      grad[f] += dz.sum();
    } else {
      const Layout L{f, h};
      const Eigen::Map<const Eigen::VectorXd> w2(params.theta.data() + L.w2(), h);
      grad.segment(L.w2(), h) += hid.transpose() * dz;
      grad[L.b2()] += dz.sum();
      const Eigen::MatrixXd dhid = ((dz * w2.transpose()).array() * (1.0 - hid.array().square())).matrix();
      const Eigen::MatrixXd dw1 = dhid.transpose() * ex.features.planes;  // h x f
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(grad.data(), h, f) += dw1;
      grad.segment(L.b1(), h) += dhid.colwise().sum().transpose();
    }
  }
  return grad / static_cast<double>(batch.size());
}

void SurrogateTrainConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "learning_rate must be positive", "surrogate.learning_rate");
  if (!(final_learning_rate > 0.0) || final_learning_rate > learning_rate)
    fail(ErrorKind::kConfig, "final_learning_rate must lie in (0, learning_rate]", "surrogate.final_learning_rate");
  if (epochs < 1) fail(ErrorKind::kConfig, "epochs must be >= 1", "surrogate.epochs");
  if (batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be >= 1", "surrogate.batch_size");
}

SurrogateParams train(std::span<const SurrogateExample> dataset, const SurrogateArch& arch,
                      const SurrogateTrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) fail(ErrorKind::kData, "surrogate training set is empty", "dataset");
  for (const auto& ex : dataset) {
    require_same_dims(ex.features.dims, ex.truth.dims(), "surrogate training example");
    if (ex.features.planes.cols() != arch.feature_count())
      fail(ErrorKind::kData, "training features do not match architecture", "arch");
  }

  SurrogateParams params = SurrogateParams::initial(arch, derive_seed(cfg.rng_seed, 1));
  Rng rng(derive_seed(cfg.rng_seed, 2));
  Eigen::VectorXd m = Eigen::VectorXd::Zero(params.theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params.theta.size());

  const std::size_t n = dataset.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const double total_steps = static_cast<double>(steps_per_epoch) * cfg.epochs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<SurrogateExample> batch;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the project PRNG.
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * bs, end = std::min(n, begin + bs);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(dataset[order[i]]);
      const Eigen::VectorXd g = gradient(params, batch);
      if (!g.allFinite())
        fail(ErrorKind::kNumeric, "surrogate gradient diverged at epoch " + std::to_string(epoch), "epoch");
      ++step;
      const double lr = cfg.final_learning_rate + 0.5 * (cfg.learning_rate - cfg.final_learning_rate) *
                                                      (1.0 + std::cos(std::numbers::pi * (step - 1) / total_steps));
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      params.theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
    }
    const double loss = batch_loss(params, dataset);
    if (!std::isfinite(loss)) fail(ErrorKind::kNumeric, "surrogate loss is NaN at epoch " + std::to_string(epoch), "epoch");
    params.meta.loss_history.push_back(loss);
  }
  params.theta = params.theta.cast<float>().cast<double>();
  params.meta.epochs_run = cfg.epochs;
  params.meta.final_loss = batch_loss(params, dataset);
  return params;
}

std::vector<SurrogateExample> make_examples(std::span<const Volume> volumes, std::span<const Mask> truths,
                                            FeatureSet set) {
  if (volumes.size() != truths.size()) fail(ErrorKind::kData, "volume/mask count mismatch", "dataset");
  std::vector<SurrogateExample> out;
  out.reserve(volumes.size());
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    require_same_dims(volumes[i].dims(), truths[i].dims(), "surrogate dataset");
    out.push_back({featurize(volumes[i], set), truths[i]});
  }
  return out;
}

std::string encode_surrogate(const SurrogateParams& params) {
  params.validate();
  nlohmann::ordered_json h;
  h["magic"] = "SPM1";
  h["arch"] = {{"features", to_string(params.arch.features)},
               {"channels", params.arch.channels},
               {"hidden", params.arch.hidden}};
  h["param_count"] = params.theta.size();
  h["meta"] = {{"epochs_run", params.meta.epochs_run},
               {"final_loss", params.meta.final_loss},
               {"loss_history", params.meta.loss_history}};
  h["dtype"] = "f32le";
  std::string out = h.dump() + "\n";
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) append_f32le(out, static_cast<float>(params.theta[i]));
  return out;
}

SurrogateParams decode_surrogate(std::string_view bytes) {
  std::string_view payload;
  const auto text = split_header(bytes, payload);
  SurrogateParams p;
  try {
    const auto h = nlohmann::json::parse(text);
    if (h.at("magic") != "SPM1") fail(ErrorKind::kData, "bad magic", "magic");
    if (h.at("dtype") != "f32le") fail(ErrorKind::kData, "unsupported dtype", "dtype");
    p.arch.features = feature_set_from(h.at("arch").at("features").get<std::string>());
    p.arch.channels = h.at("arch").at("channels").get<int>();
    p.arch.hidden = h.at("arch").at("hidden").get<int>();
    const auto count = h.at("param_count").get<std::size_t>();
    if (static_cast<int>(count) != p.arch.param_count())
      fail(ErrorKind::kData, "param_count does not match architecture", "param_count");
    if (payload.size() != 4 * count) fail(ErrorKind::kData, "payload size does not match param_count", "param_count");
    p.theta.resize(static_cast<Eigen::Index>(count));
    for (std::size_t i = 0; i < count; ++i) p.theta[static_cast<Eigen::Index>(i)] = load_f32le(payload.data() + 4 * i);
    const auto& meta = h.at("meta");
    p.meta.epochs_run = meta.at("epochs_run").get<int>();
    p.meta.final_loss = meta.at("final_loss").get<double>();
    p.meta.loss_history = meta.at("loss_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed surrogate header: ") + e.what(), "header");
  }
  p.validate();
  return p;
}

void save_surrogate(const std::filesystem::path& path, const SurrogateParams& params) {
  write_file(path, encode_surrogate(params));
}

SurrogateParams load_surrogate(const std::filesystem::path& path) { return decode_surrogate(read_file(path)); }

}  // namespace seedgrow
