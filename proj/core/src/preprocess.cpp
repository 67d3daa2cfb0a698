#include "tkvseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <type_traits>

namespace tkvseg {

namespace {

struct LinearTap {
  std::size_t i0, i1;
  double f;
};

LinearTap linear_tap(double idx, std::size_t n) {
  const double hi = static_cast<double>(n - 1);
  idx = std::clamp(idx, 0.0, hi);
  const double fl = std::floor(idx);
  LinearTap t{static_cast<std::size_t>(fl), 0, idx - fl};
  t.i1 = std::min(t.i0 + 1, n - 1);
  return t;
}

std::size_t nearest_tap(double idx, std::size_t n) {
  const double hi = static_cast<double>(n - 1);
  idx = std::clamp(idx, 0.0, hi);
  return static_cast<std::size_t>(std::floor(idx + 0.5));
}

template <typename V>
V from_double(double v) {
  if constexpr (std::is_integral_v<V>) {
    return static_cast<V>(std::lround(v));
  } else {
    return static_cast<V>(v);
  }
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

template <typename V>
double trilinear(const Volume<V>& v, const LinearTap& tz, const LinearTap& ty, const LinearTap& tx) {
  auto val = [&v](std::size_t z, std::size_t y, std::size_t x) {
    return static_cast<double>(v.at(z, y, x));
  };
  const double c00 = lerp(val(tz.i0, ty.i0, tx.i0), val(tz.i0, ty.i0, tx.i1), tx.f);
  const double c01 = lerp(val(tz.i0, ty.i1, tx.i0), val(tz.i0, ty.i1, tx.i1), tx.f);
  const double c10 = lerp(val(tz.i1, ty.i0, tx.i0), val(tz.i1, ty.i0, tx.i1), tx.f);
  const double c11 = lerp(val(tz.i1, ty.i1, tx.i0), val(tz.i1, ty.i1, tx.i1), tx.f);
  return lerp(lerp(c00, c01, ty.f), lerp(c10, c11, ty.f), tz.f);
}

// Samples `v` at continuous index coordinates produced by `coord(z, y, x) -> {iz, iy, ix}`.
template <typename V, typename F>
void sample_into(const Volume<V>& v, Volume<V>& out, Interp interp, F&& coord) {
  for (std::size_t z = 0; z < out.dims[0]; ++z) {
    for (std::size_t y = 0; y < out.dims[1]; ++y) {
      for (std::size_t x = 0; x < out.dims[2]; ++x) {
        const Vec3 c = coord(z, y, x);
        if (interp == Interp::nearest) {
          out.at(z, y, x) = v.at(nearest_tap(c[0], v.dims[0]), nearest_tap(c[1], v.dims[1]),
                                 nearest_tap(c[2], v.dims[2]));
        } else {
          out.at(z, y, x) = from_double<V>(trilinear(v, linear_tap(c[0], v.dims[0]),
                                                     linear_tap(c[1], v.dims[1]),
                                                     linear_tap(c[2], v.dims[2])));
        }
      }
    }
  }
}

}  // namespace

template <typename V>
Volume<V> resample(const Volume<V>& v, const Index3& out_dims, const Vec3& out_spacing,
                   const Vec3& out_origin, Interp interp) {
  v.validate();
  Volume<V> out(out_dims, out_spacing, out_origin);
  // Source index along axis a for output index j: offset[a] + j * ratio[a].
  Vec3 offset{}, ratio{};
  for (int a = 0; a < 3; ++a) {
    offset[a] = (out_origin[a] - v.origin[a]) / v.spacing[a];
    ratio[a] = out_spacing[a] / v.spacing[a];
  }
  sample_into(v, out, interp, [&](std::size_t z, std::size_t y, std::size_t x) {
    return Vec3{offset[0] + static_cast<double>(z) * ratio[0],
                offset[1] + static_cast<double>(y) * ratio[1],
                offset[2] + static_cast<double>(x) * ratio[2]};
  });
  return out;
}

template <typename V>
Volume<V> resample_isotropic(const Volume<V>& v, double target, Interp interp) {
  if (!(target > 0)) throw ConfigError("target spacing must be positive");
  Index3 dims{};
  Vec3 origin{};
  for (int a = 0; a < 3; ++a) {
    const double n = std::round(static_cast<double>(v.dims[a]) * v.spacing[a] / target);
    dims[a] = std::max<std::size_t>(1, static_cast<std::size_t>(n));
    // Keep the centre of the covered extent fixed.
    const double shift = static_cast<double>(v.dims[a] - 1) * v.spacing[a] / 2.0 -
                         static_cast<double>(dims[a] - 1) * target / 2.0;
    origin[a] = v.origin[a] + shift;
  }
  return resample(v, dims, Vec3{target, target, target}, origin, interp);
}

Sample resample_sample(const Sample& s, double target) {
  return Sample{resample_isotropic(s.image, target, Interp::trilinear),
                resample_isotropic(s.mask, target, Interp::nearest), s.task, s.case_id};
}

ImageVolume normalize_intensity(const ImageVolume& image, double lo, double hi) {
  if (!(hi > lo)) throw ConfigError("intensity window must satisfy hi > lo");
  ImageVolume out = image;
  const double width = hi - lo;
  for (float& v : out.data) {
    v = static_cast<float>((std::clamp(static_cast<double>(v), lo, hi) - lo) / width);
  }
  return out;
}

std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t window, std::size_t overlap) {
  if (window == 0) throw ConfigError("tile window must be positive");
  if (overlap >= window) throw ConfigError("tile overlap must be smaller than the window");
  if (extent <= window) return {0};
  const std::size_t stride = window - overlap;
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + window < extent; s += stride) starts.push_back(s);
  if (starts.back() != extent - window) starts.push_back(extent - window);
  return starts;
}

template <typename V>
Volume<V> extract_window(const Volume<V>& v, const CropWindow& w, V pad) {
  Vec3 origin{};
  for (int a = 0; a < 3; ++a) {
    origin[a] = v.origin[a] + static_cast<double>(w.start[a]) * v.spacing[a];
  }
  Volume<V> out(w.size, v.spacing, origin, pad);
  const auto in_range = [&](int a, std::size_t i, std::size_t& src) {
    const std::ptrdiff_t s = w.start[a] + static_cast<std::ptrdiff_t>(i);
    if (s < 0 || s >= static_cast<std::ptrdiff_t>(v.dims[a])) return false;
    src = static_cast<std::size_t>(s);
    return true;
  };
  for (std::size_t z = 0; z < w.size[0]; ++z) {
    std::size_t sz;
    if (!in_range(0, z, sz)) continue;
    for (std::size_t y = 0; y < w.size[1]; ++y) {
      std::size_t sy;
      if (!in_range(1, y, sy)) continue;
      for (std::size_t x = 0; x < w.size[2]; ++x) {
        std::size_t sx;
        if (in_range(2, x, sx)) out.at(z, y, x) = v.at(sz, sy, sx);
      }
    }
  }
  return out;
}

std::vector<Crop> crop_z(const Sample& s, const CropPolicy& policy) {
  s.validate();
  const Index3& t = policy.target;
  if (!(policy.z_overlap >= 0.0 && policy.z_overlap < 1.0)) {
    throw ConfigError("z_overlap must be in [0, 1)");
  }
  const auto overlap =
      static_cast<std::size_t>(std::floor(policy.z_overlap * static_cast<double>(t[0])));
  std::vector<Crop> crops;
  for (std::size_t z0 : tile_starts(s.image.dims[0], t[0], overlap)) {
    CropWindow w;
    w.size = t;
    w.start[0] = static_cast<std::ptrdiff_t>(z0);
    for (int a = 1; a < 3; ++a) {
      const auto diff = static_cast<std::ptrdiff_t>(s.image.dims[a]) -
                        static_cast<std::ptrdiff_t>(t[a]);
      // Floor division so that padding splits evenly with the remainder at the end.
      w.start[a] = diff >= 0 ? diff / 2 : -((-diff + 1) / 2);
    }
    Crop c;
    c.window = w;
    c.sample.image = extract_window(s.image, w, policy.image_pad);
    c.sample.mask = extract_window(s.mask, w, std::uint8_t{0});
    c.sample.task = s.task;
    c.sample.case_id = s.case_id;
    crops.push_back(std::move(c));
  }
  return crops;
}

void AugmentRanges::validate() const {
  if (!(max_rotation_deg >= 0)) throw ConfigError("max_rotation_deg must be >= 0");
  if (!(scale_min > 0 && scale_max >= scale_min)) {
    throw ConfigError("augmentation scale range must satisfy 0 < min <= max");
  }
}

AugmentParams draw_augment_params(std::uint64_t seed, const AugmentRanges& ranges) {
  ranges.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-ranges.max_rotation_deg, ranges.max_rotation_deg);
  std::uniform_real_distribution<double> scale(ranges.scale_min, ranges.scale_max);
  AugmentParams p;
  p.rotation_deg = angle(rng);
  p.scale = scale(rng);
  return p;
}

Sample augment(const Sample& s, const AugmentParams& params) {
  s.validate();
  if (!(params.scale > 0)) throw ConfigError("augmentation scale must be positive");
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta), k = params.scale;
  const Vec3& sp = s.image.spacing;
  const Vec3 c{static_cast<double>(s.image.dims[0] - 1) / 2.0,
               static_cast<double>(s.image.dims[1] - 1) / 2.0,
               static_cast<double>(s.image.dims[2] - 1) / 2.0};
  // Inverse map in index space, with physical rotation about z and isotropic scaling.
  const double m_zz = 1.0 / k;
  const double m_yy = cs / k, m_yx = sn * sp[2] / (sp[1] * k);
  const double m_xy = -sn * sp[1] / (sp[2] * k), m_xx = cs / k;
  auto coord = [&](std::size_t z, std::size_t y, std::size_t x) {
    const double dz = static_cast<double>(z) - c[0];
    const double dy = static_cast<double>(y) - c[1];
    const double dx = static_cast<double>(x) - c[2];
    return Vec3{c[0] + m_zz * dz, c[1] + (m_yy * dy + m_yx * dx), c[2] + (m_xy * dy + m_xx * dx)};
  };
  Sample out = s;
  sample_into(s.image, out.image, Interp::trilinear, coord);
  sample_into(s.mask, out.mask, Interp::nearest, coord);
  return out;
}

Sample augment(const Sample& s, std::uint64_t seed, const AugmentRanges& ranges) {
  return augment(s, draw_augment_params(seed, ranges));
}

template Volume<float> resample<float>(const Volume<float>&, const Index3&, const Vec3&,
                                       const Vec3&, Interp);
template Volume<std::uint8_t> resample<std::uint8_t>(const Volume<std::uint8_t>&, const Index3&,
                                                     const Vec3&, const Vec3&, Interp);
template Volume<float> resample_isotropic<float>(const Volume<float>&, double, Interp);
template Volume<std::uint8_t> resample_isotropic<std::uint8_t>(const Volume<std::uint8_t>&, double,
                                                               Interp);
template Volume<float> extract_window<float>(const Volume<float>&, const CropWindow&, float);
template Volume<std::uint8_t> extract_window<std::uint8_t>(const Volume<std::uint8_t>&,
                                                           const CropWindow&, std::uint8_t);

}  // namespace tkvseg
