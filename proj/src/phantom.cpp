#include "seedgrow/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "seedgrow/rng.hpp"

namespace seedgrow {

namespace {

constexpr std::array<double, 3> kGlandLevel{0.30, 0.40, 0.70};
constexpr std::array<double, 3> kOutsideLevel{0.15, 0.50, 0.80};
constexpr std::array<double, 3> kLesionGain{1.0, 0.4, -0.8};
constexpr int kPlacementAttempts = 2000;

/// Axis-aligned ellipsoid with a low-frequency radial perturbation.
struct Lobe {
  std::array<double, 3> centre;
  std::array<double, 3> radii;
  std::array<double, 4> wobble;  // amplitude, two frequencies' phases, frequency mix

  bool contains(double a, double b, double c) const {
    const double qa = (a - centre[0]) / radii[0];
    const double qb = (b - centre[1]) / radii[1];
    const double qc = (c - centre[2]) / radii[2];
    const double r = std::sqrt(qa * qa + qb * qb + qc * qc);
    if (r < 1e-12) return true;
    const double theta = std::acos(std::clamp(qc / r, -1.0, 1.0));
    const double phi = std::atan2(qb, qa);
    const double bump = wobble[0] * std::sin(2.0 * theta + wobble[1]) * std::cos((2.0 + wobble[3]) * phi + wobble[2]);
    return r <= 1.0 + bump;
  }
};

struct Shape {
  std::vector<Lobe> lobes;
  bool contains(double a, double b, double c) const {
    return std::any_of(lobes.begin(), lobes.end(), [&](const Lobe& l) { return l.contains(a, b, c); });
  }
};

Shape random_shape(Rng& rng, const std::array<double, 3>& centre, double rmin, double rmax) {
  Shape s;
  const double base = rng.uniform(rmin, rmax);
  const int lobes = 1 + static_cast<int>(rng.below(2));
  for (int i = 0; i < lobes; ++i) {
    Lobe l;
    const double scale = i == 0 ? 1.0 : rng.uniform(0.55, 0.8);
    for (int ax = 0; ax < 3; ++ax) {
      l.radii[ax] = base * scale * rng.uniform(0.8, 1.2);
      l.centre[ax] = centre[ax] + (i == 0 ? 0.0 : rng.uniform(-0.6, 0.6) * base);
    }
    l.wobble = {rng.uniform(0.0, 0.15), rng.uniform(0.0, 2.0 * std::numbers::pi),
                rng.uniform(0.0, 2.0 * std::numbers::pi), static_cast<double>(rng.below(2))};
    s.lobes.push_back(l);
  }
  return s;
}

Mask rasterise(const Shape& s, const Dims& dims) {
  Mask m(dims);
  for (const Lobe& l : s.lobes) {
    std::array<int, 3> lo{}, hi{};
    const std::array<int, 3> extent{dims.h, dims.w, dims.d};
    for (int ax = 0; ax < 3; ++ax) {
      const double reach = l.radii[ax] * (1.0 + std::abs(l.wobble[0])) + 1.0;
      lo[ax] = std::max(0, static_cast<int>(std::floor(l.centre[ax] - reach)));
      hi[ax] = std::min(extent[ax] - 1, static_cast<int>(std::ceil(l.centre[ax] + reach)));
    }
    for (int a = lo[0]; a <= hi[0]; ++a)
      for (int b = lo[1]; b <= hi[1]; ++b)
        for (int c = lo[2]; c <= hi[2]; ++c)
          if (l.contains(a, b, c)) m({a, b, c}) = 1;
  }
  return m;
}

Mask dilate(const Mask& m, int r) {
  Mask out(m.dims());
  const Dims& d = m.dims();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const Window w = Window::clipped(d, d.unflat(i), {r, r, r});
    for (int a = w.a0; a < w.a1; ++a)
      for (int b = w.b0; b < w.b1; ++b)
        for (int c = w.c0; c < w.c1; ++c) out({a, b, c}) = 1;
  }
  return out;
}

bool touches_border(const Mask& m) {
  const Dims& d = m.dims();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    const VoxelIndex v = d.unflat(i);
    if (v.a == 0 || v.b == 0 || v.c == 0 || v.a == d.h - 1 || v.b == d.w - 1 || v.c == d.d - 1) return true;
  }
  return false;
}

VoxelIndex pick_uniform(const Mask& m, Rng& rng) {
  const std::size_t n = count(m);
  std::uint64_t k = rng.below(n);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] && k-- == 0) return m.dims().unflat(i);
  return {};
}

}  // namespace

void PhantomSpec::validate() const {
  if (!dims.valid()) fail(ErrorKind::kConfig, "phantom dims must be positive", "phantom.dims");
  if (channels < 1) fail(ErrorKind::kConfig, "phantom needs at least one channel", "phantom.channels");
  if (lesion_count < 0) fail(ErrorKind::kConfig, "lesion_count must be >= 0", "phantom.lesion_count");
  if (mimic_count < 0) fail(ErrorKind::kConfig, "mimic_count must be >= 0", "phantom.mimic_count");
  const auto [rmin, rmax] = lesion_radius_range;
  if (!(rmin > 0.0) || !(rmin <= rmax))
    fail(ErrorKind::kConfig, "lesion radius range must satisfy 0 < min <= max", "phantom.lesion_radius_range");
  const int smallest = std::min({dims.h, dims.w, dims.d});
  if (2.0 * rmax * 1.4 + 2.0 >= smallest)
    fail(ErrorKind::kConfig, "lesion radii do not fit inside the grid", "phantom.lesion_radius_range");
  for (double v : {lesion_contrast, heterogeneity, noise_std, gland_texture, outside_texture, mimic_texture})
    if (!std::isfinite(v)) fail(ErrorKind::kConfig, "phantom intensities must be finite", "phantom");
  if (heterogeneity < 0.0 || noise_std < 0.0 || gland_texture < 0.0 || outside_texture < 0.0 || mimic_texture < 0.0)
    fail(ErrorKind::kConfig, "standard deviations must be >= 0", "phantom");
}

PhantomSample generate(const PhantomSpec& spec) {
  spec.validate();
  const Dims& dims = spec.dims;
  Rng rng(spec.rng_seed);

  // Gland: large central ellipsoid.
  Lobe gland_lobe;
  gland_lobe.centre = {(dims.h - 1) / 2.0, (dims.w - 1) / 2.0, (dims.d - 1) / 2.0};
  gland_lobe.radii = {dims.h * rng.uniform(0.40, 0.44), dims.w * rng.uniform(0.40, 0.44), dims.d * rng.uniform(0.40, 0.44)};
  gland_lobe.wobble = {rng.uniform(0.0, 0.06), rng.uniform(0.0, 6.28), rng.uniform(0.0, 6.28), 0.0};
  PhantomSample out;
  out.gland = rasterise(Shape{{gland_lobe}}, dims);
  out.truth = Mask(dims);
  out.mimics = Mask(dims);

  // Lesions and mimics share the placement routine; each blob must sit in the
  // gland two voxels clear of its edge and of earlier blobs.
  Mask occupied(dims);
  const auto [rmin, rmax] = spec.lesion_radius_range;
  auto place = [&](Mask& target, std::vector<VoxelIndex>* centres, const char* what) {
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      const VoxelIndex c = pick_uniform(out.gland, rng);
      const Shape shape = random_shape(rng, {double(c.a), double(c.b), double(c.c)}, rmin, rmax);
      const Mask blob = rasterise(shape, dims);
      if (count(blob) == 0 || touches_border(blob)) continue;
      const Mask halo = dilate(blob, 2);
      if (((halo.array() != 0) && (out.gland.array() == 0)).any()) continue;
      if (((halo.array() != 0) && (occupied.array() != 0)).any()) continue;
      target.array() = target.array().max(blob.array());
      occupied.array() = occupied.array().max(blob.array());
      if (centres) centres->push_back(c);
      return;
    }
    fail(ErrorKind::kData, std::string("could not place ") + what + " inside the gland", "phantom.lesion_radius_range");
  };
  for (int i = 0; i < spec.lesion_count; ++i) place(out.truth, &out.lesion_centres, "lesion");
  for (int i = 0; i < spec.mimic_count; ++i) place(out.mimics, nullptr, "mimic");

  Volume vol(dims, spec.channels, spec.spacing);
  for (int ch = 0; ch < spec.channels; ++ch) {
    const int k = ch % 3;
    const double lesion_level = kGlandLevel[k] + kLesionGain[k] * spec.lesion_contrast;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const VoxelIndex v = dims.unflat(i);
      const double checker = (v.a + v.b + v.c) % 2 == 0 ? 1.0 : -1.0;
      double value = out.gland[i] ? kGlandLevel[k] : kOutsideLevel[k];
      if (out.truth[i]) {
        value = lesion_level + spec.heterogeneity * rng.normal();
      } else if (out.mimics[i]) {
        value = lesion_level + spec.heterogeneity * rng.normal();
        if (k == 1) value += checker * spec.mimic_texture;
      } else if (k == 1) {
        value += checker * (out.gland[i] ? spec.gland_texture : spec.outside_texture);
      }
      if (spec.noise_std > 0.0) value += spec.noise_std * rng.normal();
      vol.at(ch, i) = static_cast<float>(std::clamp(value, 0.0, 1.0));
    }
  }
  out.volume = std::move(vol);
  return out;
}

VoxelIndex sample_seed_in_lesion(const PhantomSample& sample, std::uint64_t rng_seed) {
  if (count(sample.truth) == 0)
    fail(ErrorKind::kData, "truth mask is empty; use sample_seed_in_gland for negative cases", "truth");
  Rng rng(rng_seed);
  return pick_uniform(sample.truth, rng);
}

Field<int, ScalarTag> chebyshev_distance(const Mask& m) {
  const Dims& d = m.dims();
  Field<int, ScalarTag> dist(d, -1);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) {
      dist[i] = 0;
      queue.push_back(i);
    }
  while (!queue.empty()) {
    const std::size_t i = queue.front();
    queue.pop_front();
    const Window w = Window::clipped(d, d.unflat(i), {1, 1, 1});
    for (int a = w.a0; a < w.a1; ++a)
      for (int b = w.b0; b < w.b1; ++b)
        for (int c = w.c0; c < w.c1; ++c) {
          const std::size_t n = d.flat({a, b, c});
          if (dist[n] < 0) {
            dist[n] = dist[i] + 1;
            queue.push_back(n);
          }
        }
  }
  return dist;
}

VoxelIndex sample_perturbed_seed(const PhantomSample& sample, int max_offset_vox, std::uint64_t rng_seed) {
  if (count(sample.truth) == 0) fail(ErrorKind::kData, "truth mask is empty", "truth");
  if (max_offset_vox < 1) fail(ErrorKind::kConfig, "max_offset_vox must be >= 1", "max_offset_vox");
  const auto dist = chebyshev_distance(sample.truth);
  Mask ring(sample.truth.dims());
  ring.array() = ((dist.array() >= 1) && (dist.array() <= max_offset_vox)).cast<std::uint8_t>();
  if (count(ring) == 0) fail(ErrorKind::kData, "no voxel within the requested offset", "max_offset_vox");
  Rng rng(rng_seed);
  return pick_uniform(ring, rng);
}

VoxelIndex sample_seed_in_gland(const PhantomSample& sample, std::uint64_t rng_seed) {
  if (count(sample.gland) == 0) fail(ErrorKind::kData, "gland mask is empty", "gland");
  Rng rng(rng_seed);
  return pick_uniform(sample.gland, rng);
}

VoxelIndex gland_centre_seed(const PhantomSample& sample) {
  const Dims& d = sample.gland.dims();
  double sa = 0, sb = 0, sc = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < sample.gland.size(); ++i) {
    if (!sample.gland[i]) continue;
    const VoxelIndex v = d.unflat(i);
    sa += v.a;
    sb += v.b;
    sc += v.c;
    ++n;
  }
  if (n == 0) fail(ErrorKind::kData, "gland mask is empty", "gland");
  const double ca = sa / n, cb = sb / n, cc = sc / n;
  VoxelIndex best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sample.gland.size(); ++i) {
    if (!sample.gland[i]) continue;
    const VoxelIndex v = d.unflat(i);
    const double dd = (v.a - ca) * (v.a - ca) + (v.b - cb) * (v.b - cb) + (v.c - cc) * (v.c - cc);
    if (dd < best_d) {
      best_d = dd;
      best = v;
    }
  }
  return best;
}

}  // namespace seedgrow
