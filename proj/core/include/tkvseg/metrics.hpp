#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tkvseg/volume.hpp"

namespace tkvseg {

// 2|P n G| / (|P| + |G|) for one class; 1.0 when both sets are empty.
double dice_score(const LabelVolume& pred, const LabelVolume& gt, std::uint8_t class_id);

struct DiceReport {
  std::vector<double> per_class;  // index = class id; entry 0 is background

  // Mean over the given class ids (the two kidney classes for the kidney task).
  double mean_of(const std::vector<std::uint8_t>& class_ids) const;
  // Mean over all foreground classes.
  double mean_foreground() const;
};

DiceReport dice_report(const LabelVolume& pred, const LabelVolume& gt, std::size_t num_classes);

// Voxels in any of `class_ids`, times the voxel volume.
double compute_tkv(const LabelVolume& labels, const std::vector<std::uint8_t>& class_ids);
double compute_tkv(const LabelVolume& labels, const std::vector<std::uint8_t>& class_ids,
                   const Vec3& spacing);

struct TkvResult {
  std::string case_id;
  double tkv_pred = 0;
  double tkv_gt = 0;
  std::optional<double> percent_error;  // signed; empty when tkv_gt == 0
};

// 100 (pred - gt) / gt, or nullopt when gt is not positive.
std::optional<double> tkv_percent_error(double pred, double gt);
TkvResult make_tkv_result(std::string case_id, double pred, double gt);

struct MapeSummary {
  double mape = 0;            // mean of |percent error| over defined cases
  std::size_t included = 0;
  std::size_t excluded = 0;   // cases with gt == 0
};
MapeSummary mape(const std::vector<TkvResult>& results);

struct ConvergencePoint {
  std::size_t epoch = 0;
  double value = 0;
};

// Append-only (epoch, validation mean kidney dice) series.
class ConvergenceLog {
 public:
  void append(std::size_t epoch, double value);
  const std::vector<ConvergencePoint>& points() const { return points_; }
  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<ConvergencePoint> points_;
};

}  // namespace tkvseg
