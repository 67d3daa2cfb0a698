#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace tkvseg {

struct GradcheckOptions {
  std::uint64_t seed = 20240917;
  std::size_t shapes_per_check = 10;
  double tolerance = 1e-4;
  double step = 1e-6;
  // Replaces the relu backward with a wrong rule; used to confirm the harness can fail.
  bool inject_fault = false;
};

struct GradcheckEntry {
  std::string name;        // e.g. "conv3d.kernel"
  std::size_t shapes = 0;  // random instances checked
  double max_error = 0;    // worst relative error over all instances
  bool passed = false;
};

// Finite-difference checks at 64-bit for every differentiable primitive (with respect to
// each of its inputs) and for both losses, each over `shapes_per_check` random shapes.
std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace tkvseg
