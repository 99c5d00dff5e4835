#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "seedgrow/error.hpp"

namespace seedgrow {

/// Integer grid coordinate (a, b, c). Also used for symmetric window radii.
struct VoxelIndex {
  int a = 0;
  int b = 0;
  int c = 0;

  friend constexpr auto operator<=>(const VoxelIndex&, const VoxelIndex&) = default;
};

std::string to_string(const VoxelIndex& v);

/// Grid extent (H, W, D). Flat index order is a-major, then b, then c.
struct Dims {
  int h = 0;
  int w = 0;
  int d = 0;

  constexpr std::size_t size() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(d);
  }
  constexpr bool contains(const VoxelIndex& v) const {
    return v.a >= 0 && v.b >= 0 && v.c >= 0 && v.a < h && v.b < w && v.c < d;
  }
  constexpr std::size_t flat(const VoxelIndex& v) const {
    return (static_cast<std::size_t>(v.a) * w + v.b) * d + v.c;
  }
  constexpr VoxelIndex unflat(std::size_t i) const {
    const auto c = static_cast<int>(i % d);
    i /= d;
    return {static_cast<int>(i / w), static_cast<int>(i % w), c};
  }
  constexpr bool valid() const { return h > 0 && w > 0 && d > 0; }

  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Throws a data error naming `what` if the two extents differ.
void require_same_dims(const Dims& lhs, const Dims& rhs, const char* what);

/// Window v ± radius clipped to the grid, as half-open ranges per axis.
struct Window {
  int a0, a1, b0, b1, c0, c1;

  static Window clipped(const Dims& dims, const VoxelIndex& v, const VoxelIndex& radius) {
    return {std::max(0, v.a - radius.a), std::min(dims.h, v.a + radius.a + 1),
            std::max(0, v.b - radius.b), std::min(dims.w, v.b + radius.b + 1),
            std::max(0, v.c - radius.c), std::min(dims.d, v.c + radius.c + 1)};
  }
  std::size_t count() const {
    return static_cast<std::size_t>(a1 - a0) * static_cast<std::size_t>(b1 - b0) *
           static_cast<std::size_t>(c1 - c0);
  }
};

/// Dense scalar field over a grid. `Tag` distinguishes semantically different
/// fields that share a storage type.
template <typename Scalar, typename Tag>
class Field {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using value_type = Scalar;

  Field() = default;
  explicit Field(const Dims& dims, Scalar fill = Scalar(0)) : dims_(dims), data_(Array::Constant(static_cast<Eigen::Index>(dims.size()), fill)) {}
  Field(const Dims& dims, Array data) : dims_(dims), data_(std::move(data)) {
    if (static_cast<std::size_t>(data_.size()) != dims_.size())
      fail(ErrorKind::kData, "field payload size does not match dims", "dims");
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  Scalar operator()(const VoxelIndex& v) const { return data_[static_cast<Eigen::Index>(dims_.flat(v))]; }
  Scalar& operator()(const VoxelIndex& v) { return data_[static_cast<Eigen::Index>(dims_.flat(v))]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }

  const Array& array() const { return data_; }
  Array& array() { return data_; }

  friend bool operator==(const Field& lhs, const Field& rhs) {
    return lhs.dims_ == rhs.dims_ && (lhs.data_ == rhs.data_).all();
  }

 private:
  Dims dims_;
  Array data_;
};

struct MaskTag {};
struct ProbabilityTag {};
struct EntropyTag {};
struct ScalarTag {};

/// Binary occupancy grid; values are 0 or 1.
using Mask = Field<std::uint8_t, MaskTag>;
/// Per-voxel probabilities in [0, 1].
using ProbabilityField = Field<double, ProbabilityTag>;
/// Per-voxel binary entropy in nats, in [0, ln 2].
using EntropyField = Field<double, EntropyTag>;
/// Unconstrained per-voxel scalar map.
using ScalarField = Field<double, ScalarTag>;

inline std::size_t count(const Mask& m) {
  return static_cast<std::size_t>(m.array().template cast<std::size_t>().sum());
}

using Spacing = std::array<double, 3>;

/// Multi-channel volume. Storage is channel-major, then a/b/c as in Dims.
class Volume {
 public:
  Volume() = default;
  Volume(const Dims& dims, int channels, const Spacing& spacing = {1.0, 1.0, 1.0});
  Volume(const Dims& dims, int channels, const Spacing& spacing, Eigen::ArrayXf data);

  const Dims& dims() const { return dims_; }
  int channels() const { return channels_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t voxel_count() const { return dims_.size(); }

  float at(int channel, const VoxelIndex& v) const { return data_[offset(channel, dims_.flat(v))]; }
  float& at(int channel, const VoxelIndex& v) { return data_[offset(channel, dims_.flat(v))]; }
  float at(int channel, std::size_t flat) const { return data_[offset(channel, flat)]; }
  float& at(int channel, std::size_t flat) { return data_[offset(channel, flat)]; }

  auto channel(int c) const { return data_.segment(static_cast<Eigen::Index>(c * dims_.size()), static_cast<Eigen::Index>(dims_.size())); }
  auto channel(int c) { return data_.segment(static_cast<Eigen::Index>(c * dims_.size()), static_cast<Eigen::Index>(dims_.size())); }

  const Eigen::ArrayXf& data() const { return data_; }
  Eigen::ArrayXf& data() { return data_; }

  /// Copy holding only the listed channels, in the given order.
  Volume select_channels(std::span<const int> keep) const;

  /// Throws a data error if any intensity is non-finite or metadata is invalid.
  void validate() const;

  friend bool operator==(const Volume& lhs, const Volume& rhs) {
    return lhs.dims_ == rhs.dims_ && lhs.channels_ == rhs.channels_ && lhs.spacing_ == rhs.spacing_ &&
           (lhs.data_ == rhs.data_).all();
  }

 private:
  Eigen::Index offset(int channel, std::size_t flat) const {
    return static_cast<Eigen::Index>(static_cast<std::size_t>(channel) * dims_.size() + flat);
  }

  Dims dims_;
  int channels_ = 0;
  Spacing spacing_{1.0, 1.0, 1.0};
  Eigen::ArrayXf data_;
};

// ---------------------------------------------------------------------------
// Operations

/// Smoothing added to numerator and denominator of the Dice ratio.
inline constexpr double kDiceSmoothing = 1e-6;

/// Dice loss 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps). `pred` may be a
/// binary mask or a soft probability field.
template <typename Scalar, typename Tag>
double dice_loss(const Field<Scalar, Tag>& pred, const Mask& truth) {
  require_same_dims(pred.dims(), truth.dims(), "dice_loss");
  const auto p = pred.array().template cast<double>();
  const auto t = truth.array().template cast<double>();
  const double intersection = (p * t).sum();
  const double denom = p.sum() + t.sum() + kDiceSmoothing;
  return 1.0 - (2.0 * intersection + kDiceSmoothing) / denom;
}

/// Binary entropy in nats; 0 at p = 0 and p = 1.
double binary_entropy(double p);

/// Voxel-wise binary entropy of a probability map.
EntropyField entropy_map(const ProbabilityField& p);

enum class ChannelReduction { kMax, kMean };

/// Population standard deviation of intensities in the clipped window
/// v ± radius, computed per channel and reduced across channels.
double neighbourhood_std(const Volume& x, const VoxelIndex& v, const VoxelIndex& radius,
                         ChannelReduction reduction = ChannelReduction::kMax);

/// neighbourhood_std evaluated at every voxel.
ScalarField neighbourhood_std_map(const Volume& x, const VoxelIndex& radius,
                                  ChannelReduction reduction = ChannelReduction::kMax);

/// Number of voxels where the masks differ.
std::size_t mask_l1_diff(const Mask& a, const Mask& b);

/// Throws unless every value lies in [0, 1].
void validate(const ProbabilityField& p);

}  // namespace seedgrow
