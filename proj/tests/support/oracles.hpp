#pragma once

// Reference implementations written independently of the library code: plain loops in
// long double, no shared helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tkvseg/tensor.hpp"

namespace oracle {

// Eq.-style soft dice straight from the definition. probs/target are [B, C, ...] flattened.
inline long double dice_loss(const std::vector<double>& p, const std::vector<double>& g,
                             std::size_t batch, std::size_t classes, std::size_t voxels,
                             double smoothing) {
  long double total = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    long double inter = 0, sp = 0, sg = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < voxels; ++i) {
        const std::size_t k = (b * classes + c) * voxels + i;
        inter += static_cast<long double>(p[k]) * g[k];
        sp += p[k];
        sg += g[k];
      }
    }
    const long double den = sp + sg + smoothing;
    if (den != 0) total += (2 * inter + smoothing) / den;
  }
  return -total / static_cast<long double>(classes);
}

// Mean of -log p[true class] over every voxel.
inline long double mean_cross_entropy(const std::vector<double>& p,
                                      const std::vector<std::uint8_t>& labels, std::size_t batch,
                                      std::size_t classes, std::size_t voxels) {
  long double s = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < voxels; ++i) {
      const double q = std::max(p[(b * classes + labels[b * voxels + i]) * voxels + i], 1e-12);
      s -= std::log(static_cast<long double>(q));
    }
  }
  return s / static_cast<long double>(batch * voxels);
}

struct Selection {
  std::vector<std::size_t> indices;
  double threshold;
};

// Full sort by (probability, index); the first K are selected. K is computed from an
// exact rational fraction num/den.
inline Selection sort_select(const std::vector<double>& probs, std::size_t num, std::size_t den) {
  const std::size_t n = probs.size();
  const std::size_t k = std::max<std::size_t>(1, n * num / den);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  Selection s;
  s.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(s.indices.begin(), s.indices.end());
  s.threshold = k < n ? probs[order[k]] : std::numeric_limits<double>::infinity();
  return s;
}

// Direct zero-padded cross-correlation, [B,Cin,Z,Y,X] * [Cout,Cin,kz,ky,kx] (+ bias).
inline tkvseg::Tensor<double> conv3d_same(const tkvseg::Tensor<double>& in,
                                          const tkvseg::Tensor<double>& k,
                                          const tkvseg::Tensor<double>& bias) {
  const auto& s = in.shape();
  const auto& ks = k.shape();
  tkvseg::Tensor<double> out(tkvseg::Shape{s[0], ks[0], s[2], s[3], s[4]});
  const long pz = static_cast<long>(ks[2] / 2), py = static_cast<long>(ks[3] / 2),
             px = static_cast<long>(ks[4] / 2);
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t o = 0; o < ks[0]; ++o)
      for (long z = 0; z < static_cast<long>(s[2]); ++z)
        for (long y = 0; y < static_cast<long>(s[3]); ++y)
          for (long x = 0; x < static_cast<long>(s[4]); ++x) {
            long double acc = bias[o];
            for (std::size_t c = 0; c < s[1]; ++c)
              for (long dz = 0; dz < static_cast<long>(ks[2]); ++dz)
                for (long dy = 0; dy < static_cast<long>(ks[3]); ++dy)
                  for (long dx = 0; dx < static_cast<long>(ks[4]); ++dx) {
                    const long iz = z + dz - pz, iy = y + dy - py, ix = x + dx - px;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= static_cast<long>(s[2]) ||
                        iy >= static_cast<long>(s[3]) || ix >= static_cast<long>(s[4]))
                      continue;
                    acc += static_cast<long double>(in.at(b, c, iz, iy, ix)) *
                           k.at(o, c, dz, dy, dx);
                  }
            out.at(b, o, z, y, x) = static_cast<double>(acc);
          }
  return out;
}

// Transposed stride-2 convolution with a [Cin,Cout,2,2,2] kernel: each input voxel
// scatters a 2x2x2 block.
inline tkvseg::Tensor<double> upconv3d(const tkvseg::Tensor<double>& in,
                                       const tkvseg::Tensor<double>& k,
                                       const tkvseg::Tensor<double>& bias) {
  const auto& s = in.shape();
  const std::size_t cout = k.shape()[1];
  tkvseg::Tensor<double> out(tkvseg::Shape{s[0], cout, 2 * s[2], 2 * s[3], 2 * s[4]});
  for (std::size_t b = 0; b < s[0]; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t z = 0; z < 2 * s[2]; ++z)
        for (std::size_t y = 0; y < 2 * s[3]; ++y)
          for (std::size_t x = 0; x < 2 * s[4]; ++x) {
            long double acc = bias[o];
            for (std::size_t c = 0; c < s[1]; ++c)
              acc += static_cast<long double>(in.at(b, c, z / 2, y / 2, x / 2)) *
                     k.at(c, o, z % 2, y % 2, x % 2);
            out.at(b, o, z, y, x) = static_cast<double>(acc);
          }
  return out;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* env = std::getenv("TKVSEG_TEST_TMP");
  const std::filesystem::path root =
      env ? std::filesystem::path(env) : std::filesystem::temp_directory_path() / "tkvseg_tests";
  const auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename T>
tkvseg::Tensor<T> random_tensor(tkvseg::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
  return tkvseg::Tensor<T>::uniform(std::move(shape), static_cast<T>(lo), static_cast<T>(hi), rng);
}

}  // namespace oracle
