#include "seedgrow/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace seedgrow {

std::string to_string(const VoxelIndex& v) {
  return std::to_string(v.a) + "," + std::to_string(v.b) + "," + std::to_string(v.c);
}

std::string to_string(const Dims& d) {
  return std::to_string(d.h) + "x" + std::to_string(d.w) + "x" + std::to_string(d.d);
}

void require_same_dims(const Dims& lhs, const Dims& rhs, const char* what) {
  if (!(lhs == rhs))
    fail(ErrorKind::kData, std::string(what) + ": dimension mismatch " + to_string(lhs) + " vs " + to_string(rhs),
         "dims");
}

Volume::Volume(const Dims& dims, int channels, const Spacing& spacing)
    : Volume(dims, channels, spacing, Eigen::ArrayXf::Zero(static_cast<Eigen::Index>(dims.size() * std::max(channels, 0)))) {}

Volume::Volume(const Dims& dims, int channels, const Spacing& spacing, Eigen::ArrayXf data)
    : dims_(dims), channels_(channels), spacing_(spacing), data_(std::move(data)) {
  if (!dims_.valid()) fail(ErrorKind::kData, "volume dims must be positive", "dims");
  if (channels_ <= 0) fail(ErrorKind::kData, "volume needs at least one channel", "channels");
  for (double s : spacing_)
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorKind::kData, "spacing components must be positive", "spacing_mm");
  if (static_cast<std::size_t>(data_.size()) != dims_.size() * static_cast<std::size_t>(channels_))
    fail(ErrorKind::kData, "volume payload size does not match dims x channels", "dims");
}

Volume Volume::select_channels(std::span<const int> keep) const {
  if (keep.empty()) fail(ErrorKind::kConfig, "channel selection is empty", "channels");
  Volume out(dims_, static_cast<int>(keep.size()), spacing_);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= channels_) fail(ErrorKind::kConfig, "channel index out of range", "channels");
    out.channel(static_cast<int>(i)) = channel(keep[i]);
  }
  return out;
}

void Volume::validate() const {
  if (!data_.isFinite().all()) fail(ErrorKind::kData, "volume contains non-finite intensities", "data");
}

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -(p * std::log(p) + (1.0 - p) * std::log1p(-p));
}

EntropyField entropy_map(const ProbabilityField& p) {
  EntropyField out(p.dims());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = binary_entropy(p[i]);
  return out;
}

namespace {

double window_std(const Volume& x, int channel, const Window& w) {
  const Dims& dims = x.dims();
  const auto n = static_cast<double>(w.count());
  double sum = 0.0;
  for (int a = w.a0; a < w.a1; ++a)
    for (int b = w.b0; b < w.b1; ++b) {
      const std::size_t row = dims.flat({a, b, 0});
      for (int c = w.c0; c < w.c1; ++c) sum += x.at(channel, row + c);
    }
  const double mean = sum / n;
  double ss = 0.0;
  for (int a = w.a0; a < w.a1; ++a)
    for (int b = w.b0; b < w.b1; ++b) {
      const std::size_t row = dims.flat({a, b, 0});
      for (int c = w.c0; c < w.c1; ++c) {
        const double dev = x.at(channel, row + c) - mean;
        ss += dev * dev;
      }
    }
  return std::sqrt(ss / n);
}

}  // namespace

double neighbourhood_std(const Volume& x, const VoxelIndex& v, const VoxelIndex& radius,
                         ChannelReduction reduction) {
  if (!x.dims().contains(v)) fail(ErrorKind::kData, "voxel " + to_string(v) + " outside grid", "voxel");
  const Window w = Window::clipped(x.dims(), v, radius);
  double acc = 0.0;
  for (int ch = 0; ch < x.channels(); ++ch) {
    const double s = window_std(x, ch, w);
    acc = reduction == ChannelReduction::kMax ? std::max(acc, s) : acc + s;
  }
  return reduction == ChannelReduction::kMax ? acc : acc / x.channels();
}

ScalarField neighbourhood_std_map(const Volume& x, const VoxelIndex& radius, ChannelReduction reduction) {
  ScalarField out(x.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = neighbourhood_std(x, x.dims().unflat(i), radius, reduction);
  return out;
}

std::size_t mask_l1_diff(const Mask& a, const Mask& b) {
  require_same_dims(a.dims(), b.dims(), "mask_l1_diff");
  return static_cast<std::size_t>((a.array() != b.array()).count());
}

void validate(const ProbabilityField& p) {
  if (!((p.array() >= 0.0) && (p.array() <= 1.0)).all())
    fail(ErrorKind::kData, "probability outside [0, 1]", "probability");
}

}  // namespace seedgrow
