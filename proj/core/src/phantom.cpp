#include "tkvseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tkvseg/random.hpp"

namespace tkvseg {

namespace {

constexpr double kReferenceExtentMm = 48.0;  // the default ranges are tuned for 32 x 1.5 mm

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Distance from the centre to the (unperturbed) surface along unit direction d.
double support(const Ellipsoid& e, const Vec3& d) {
  double s = 0;
  for (int a = 0; a < 3; ++a) s += (d[a] / e.radii[a]) * (d[a] / e.radii[a]);
  return 1.0 / std::sqrt(s);
}

double draw(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return normalized({n(rng), n(rng), n(rng)});
}

Ellipsoid make_ellipsoid(std::mt19937_64& rng, const Vec3& center, const Vec3& radii,
                         double lumpiness) {
  Ellipsoid e;
  e.center = center;
  e.radii = radii;
  e.lump_amplitude = lumpiness;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (int m = 0; m < 3; ++m) {
    e.lump_dirs[m] = random_unit(rng);
    e.lump_phase[m] = phase(rng);
  }
  return e;
}

struct Sphere {
  Vec3 center;
  double radius;
  bool contains(const Vec3& p) const {
    double d = 0;
    for (int a = 0; a < 3; ++a) d += (p[a] - center[a]) * (p[a] - center[a]);
    return d <= radius * radius;
  }
};

void check_range(const Range& r, const char* what) {
  if (!(r.lo > 0 && r.hi >= r.lo)) {
    throw ConfigError(std::string("phantom ") + what + " range must satisfy 0 < lo <= hi");
  }
}

}  // namespace

bool Ellipsoid::contains(const Vec3& p) const {
  Vec3 u{};
  double rho2 = 0;
  for (int a = 0; a < 3; ++a) {
    u[a] = (p[a] - center[a]) / radii[a];
    rho2 += u[a] * u[a];
  }
  const double bound = 1.0 + std::abs(lump_amplitude);
  if (rho2 > bound * bound) return false;
  if (lump_amplitude == 0.0) return rho2 <= 1.0;
  const double rho = std::sqrt(rho2);
  if (rho == 0.0) return true;
  double f = 0;
  for (int m = 0; m < 3; ++m) {
    const double proj =
        (u[0] * lump_dirs[m][0] + u[1] * lump_dirs[m][1] + u[2] * lump_dirs[m][2]) / rho;
    f += std::sin(3.0 * std::numbers::pi * proj + lump_phase[m]);
  }
  return rho <= 1.0 + lump_amplitude * f / 3.0;
}

double Ellipsoid::analytic_volume() const {
  return 4.0 / 3.0 * std::numbers::pi * radii[0] * radii[1] * radii[2];
}

PhantomSpec PhantomSpec::for_grid(const Index3& dims, double spacing, std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  s.dims = dims;
  s.spacing = {spacing, spacing, spacing};
  const Vec3 ext = s.extent();
  auto scaled = [](Range r, double extent) {
    const double f = extent / kReferenceExtentMm;
    return Range{r.lo * f, r.hi * f};
  };
  s.kidney_radius_z = scaled(s.kidney_radius_z, ext[0]);
  s.kidney_radius_y = scaled(s.kidney_radius_y, ext[1]);
  s.kidney_radius_x = scaled(s.kidney_radius_x, ext[2]);
  s.liver_radius_z = scaled(s.liver_radius_z, ext[0]);
  s.liver_radius_y = scaled(s.liver_radius_y, ext[1]);
  s.liver_radius_x = scaled(s.liver_radius_x, ext[2]);
  return s;
}

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] == 0) throw ConfigError("phantom dims must be positive");
    if (!(spacing[a] > 0)) throw ConfigError("phantom spacing must be positive");
  }
  check_range(kidney_radius_z, "kidney_radius_z");
  check_range(kidney_radius_y, "kidney_radius_y");
  check_range(kidney_radius_x, "kidney_radius_x");
  check_range(liver_radius_z, "liver_radius_z");
  check_range(liver_radius_y, "liver_radius_y");
  check_range(liver_radius_x, "liver_radius_x");
  if (!(lumpiness >= 0 && lumpiness < 0.5)) throw ConfigError("lumpiness must be in [0, 0.5)");
  if (!(contact_probability >= 0 && contact_probability <= 1)) {
    throw ConfigError("contact_probability must be in [0, 1]");
  }
  if (!(noise_sigma_hu >= 0)) throw ConfigError("noise_sigma_hu must be >= 0");
  if (!(center_jitter >= 0 && center_jitter < 0.5)) {
    throw ConfigError("center_jitter must be in [0, 0.5)");
  }
  const Vec3 ext = extent();
  const double k_hi[3] = {kidney_radius_z.hi, kidney_radius_y.hi, kidney_radius_x.hi};
  const double l_hi[3] = {liver_radius_z.hi, liver_radius_y.hi, liver_radius_x.hi};
  const char* axes[3] = {"z", "y", "x"};
  for (int a = 0; a < 3; ++a) {
    // Kidneys must fit entirely; the liver may be clipped by the field of view.
    if (2.0 * k_hi[a] * (1.0 + lumpiness) > ext[a] - spacing[a]) {
      throw ConfigError(std::string("phantom kidney radius along ") + axes[a] +
                        " exceeds the grid extent");
    }
    if (2.0 * l_hi[a] > ext[a]) {
      throw ConfigError(std::string("phantom liver radius along ") + axes[a] +
                        " exceeds the grid extent");
    }
  }
}

PhantomCase generate_phantom_case(const PhantomSpec& spec, const std::string& task,
                                  const std::string& case_id) {
  spec.validate();
  if (task != "kidney" && task != "liver") {
    throw ConfigError("phantom task must be 'kidney' or 'liver', got '" + task + "'");
  }
  std::mt19937_64 rng(mix_seed(spec.seed, fnv1a(task)));
  const Vec3 ext = spec.extent();
  std::uniform_real_distribution<double> jitter(-spec.center_jitter, spec.center_jitter);

  auto place_kidney = [&](const Vec3& frac) {
    const Vec3 radii{draw(rng, spec.kidney_radius_z), draw(rng, spec.kidney_radius_y),
                     draw(rng, spec.kidney_radius_x)};
    Vec3 c{};
    for (int a = 0; a < 3; ++a) {
      const double hi = static_cast<double>(spec.dims[a] - 1) * spec.spacing[a];
      const double margin = radii[a] * (1.0 + spec.lumpiness);
      c[a] = std::clamp((frac[a] + jitter(rng)) * ext[a], margin, std::max(margin, hi - margin));
    }
    return make_ellipsoid(rng, c, radii, spec.lumpiness);
  };

  PhantomCase out;
  out.left_kidney = place_kidney(spec.left_kidney_center);
  out.right_kidney = place_kidney(spec.right_kidney_center);

  // The liver sits cranial and anterior to the right kidney; the contact draw decides whether
  // their surfaces meet.
  const Vec3 liver_radii{draw(rng, spec.liver_radius_z), draw(rng, spec.liver_radius_y),
                         draw(rng, spec.liver_radius_x)};
  Ellipsoid liver = make_ellipsoid(rng, {}, liver_radii, spec.lumpiness);
  const Vec3 nominal{0.72 * ext[0], 0.30 * ext[1], 0.68 * ext[2]};
  const Vec3& kc = out.right_kidney.center;
  const Vec3 dir = normalized({nominal[0] - kc[0], nominal[1] - kc[1], nominal[2] - kc[2]});
  out.liver_contacts_kidney =
      std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.contact_probability;
  const double reach = support(out.right_kidney, dir) + support(liver, dir);
  const double distance = out.liver_contacts_kidney ? 0.92 * reach
                                                    : 1.15 * reach + 2.0 * spec.spacing[0];
  for (int a = 0; a < 3; ++a) liver.center[a] = kc[a] + distance * dir[a];
  out.liver = liver;

  std::vector<Sphere> left_cysts, right_cysts;
  auto make_cysts = [&](const Ellipsoid& k, std::vector<Sphere>& cysts) {
    const double rmin = std::min({k.radii[0], k.radii[1], k.radii[2]});
    std::uniform_real_distribution<double> r(0.25 * rmin, 0.35 * rmin);
    for (std::size_t i = 0; i < spec.cysts_per_kidney; ++i) {
      const Vec3 u = random_unit(rng);
      Vec3 c{};
      for (int a = 0; a < 3; ++a) c[a] = k.center[a] + 0.4 * k.radii[a] * u[a];
      cysts.push_back({c, r(rng)});
    }
  };
  make_cysts(out.left_kidney, left_cysts);
  make_cysts(out.right_kidney, right_cysts);

  ImageVolume image(spec.dims, spec.spacing, {0, 0, 0}, static_cast<float>(spec.background_hu));
  LabelVolume mask(spec.dims, spec.spacing, {0, 0, 0}, 0);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma_hu);
  const bool kidney_task = task == "kidney";
  auto in_any = [](const std::vector<Sphere>& s, const Vec3& p) {
    return std::any_of(s.begin(), s.end(), [&p](const Sphere& c) { return c.contains(p); });
  };
  for (std::size_t z = 0; z < spec.dims[0]; ++z) {
    for (std::size_t y = 0; y < spec.dims[1]; ++y) {
      for (std::size_t x = 0; x < spec.dims[2]; ++x) {
        const Vec3 p{z * spec.spacing[0], y * spec.spacing[1], x * spec.spacing[2]};
        double hu = spec.background_hu;
        std::uint8_t label = 0;
        if (out.left_kidney.contains(p)) {
          hu = spec.left_kidney_hu + (in_any(left_cysts, p) ? spec.cyst_offset_hu : 0.0);
          label = kidney_task ? 1 : 0;
        } else if (out.right_kidney.contains(p)) {
          hu = spec.right_kidney_hu + (in_any(right_cysts, p) ? spec.cyst_offset_hu : 0.0);
          label = kidney_task ? 2 : 0;
        } else if (out.liver.contains(p)) {
          hu = spec.liver_hu;
          label = kidney_task ? 0 : 1;
        }
        if (spec.noise_sigma_hu > 0) hu += noise(rng);
        image.at(z, y, x) = static_cast<float>(hu);
        mask.at(z, y, x) = label;
      }
    }
  }
  out.sample = Sample{std::move(image), std::move(mask), task, case_id};
  return out;
}

PhantomPair generate_phantom_pair(const PhantomSpec& spec, const std::string& case_id) {
  PhantomSpec kidney_spec = spec;
  kidney_spec.seed = mix_seed(spec.seed, 1);
  PhantomSpec liver_spec = spec;
  liver_spec.seed = mix_seed(spec.seed, 2);
  return PhantomPair{generate_phantom_case(kidney_spec, "kidney", case_id),
                     generate_phantom_case(liver_spec, "liver", case_id)};
}

}  // namespace tkvseg
