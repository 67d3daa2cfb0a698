#include "tkvseg/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tkvseg/errors.hpp"

namespace tkvseg {

namespace {

void require_same_dims(const LabelVolume& pred, const LabelVolume& gt) {
  if (pred.dims != gt.dims) {
    throw ShapeError("label volumes differ in dims: " + to_string(pred.dims) + " vs " +
                     to_string(gt.dims));
  }
}

}  // namespace

double dice_score(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id) {
  require_same_dims(pred, gt);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool a = pred.data[i] == class_id;
    const bool b = gt.data[i] == class_id;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double DiceReport::mean_of(const std::vector<std::uint8_t>& class_ids) const {
  if (class_ids.empty()) throw ContractError("DiceReport::mean_of needs at least one class");
  double s = 0;
  for (auto c : class_ids) {
    if (c >= per_class.size()) {
      throw ContractError("class id " + std::to_string(c) + " not in dice report");
    }
    s += per_class[c];
  }
  return s / static_cast<double>(class_ids.size());
}

double DiceReport::mean_foreground() const {
  if (per_class.size() < 2) throw ContractError("dice report has no foreground classes");
  double s = 0;
  for (std::size_t c = 1; c < per_class.size(); ++c) s += per_class[c];
  return s / static_cast<double>(per_class.size() - 1);
}

DiceReport dice_report(const LabelVolume& pred, const LabelVolume& gt, std::size_t num_classes) {
  require_same_dims(pred, gt);
  if (num_classes < 2 || num_classes > 256) throw ConfigError("num_classes must be in [2, 256]");
  // One pass with per-class counters.
  std::vector<std::size_t> p(num_classes, 0), g(num_classes, 0), both(num_classes, 0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const std::size_t a = pred.data[i], b = gt.data[i];
    if (a < num_classes) ++p[a];
    if (b < num_classes) ++g[b];
    if (a == b && a < num_classes) ++both[a];
  }
  DiceReport r;
  r.per_class.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    r.per_class[c] = p[c] + g[c] == 0 ? 1.0
                                      : 2.0 * static_cast<double>(both[c]) /
                                            static_cast<double>(p[c] + g[c]);
  }
  return r;
}

double compute_tkv(const LabelVolume& labels, const std::vector<std::uint8_t>& class_ids,
                   const Vec3& spacing) {
  bool member[256] = {};
  for (auto c : class_ids) member[c] = true;
  std::size_t n = 0;
  for (auto v : labels.data) n += member[v];
  return static_cast<double>(n) * spacing[0] * spacing[1] * spacing[2];
}

double compute_tkv(const LabelVolume& labels, const std::vector<std::uint8_t>& class_ids) {
  return compute_tkv(labels, class_ids, labels.spacing);
}

std::optional<double> tkv_percent_error(double pred, double gt) {
  if (!(gt > 0)) return std::nullopt;
  return 100.0 * (pred - gt) / gt;
}

TkvResult make_tkv_result(std::string case_id, double pred, double gt) {
  return TkvResult{std::move(case_id), pred, gt, tkv_percent_error(pred, gt)};
}

MapeSummary mape(const std::vector<TkvResult>& results) {
  MapeSummary s;
  double total = 0;
  for (const auto& r : results) {
    if (!r.percent_error) {
      ++s.excluded;
      continue;
    }
    total += std::abs(*r.percent_error);
    ++s.included;
  }
  s.mape = s.included ? total / static_cast<double>(s.included) : 0.0;
  return s;
}

void ConvergenceLog::append(std::size_t epoch, double value) {
  if (!points_.empty() && epoch <= points_.back().epoch) {
    throw ContractError("convergence log epochs must be strictly increasing");
  }
  points_.push_back({epoch, value});
}

}  // namespace tkvseg
