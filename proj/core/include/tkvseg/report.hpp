#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tkvseg/metrics.hpp"

namespace tkvseg {

inline constexpr const char* kMetricsCsvHeader =
    "case_id,fold,dice_left,dice_right,dice_mean,tkv_pred_mm3,tkv_gt_mm3,tkv_pct_err";

struct CaseMetrics {
  std::string case_id;
  std::optional<std::size_t> fold;
  double dice_left = 0;
  double dice_right = 0;
  double dice_mean = 0;
  double tkv_pred_mm3 = 0;
  double tkv_gt_mm3 = 0;
  std::optional<double> tkv_pct_err;
};

struct SummaryRow {
  std::string label;  // "fold_mean" or "overall"
  std::optional<std::size_t> fold;
  double dice_left = 0, dice_right = 0, dice_mean = 0;
  double tkv_pred_mm3 = 0, tkv_gt_mm3 = 0;
  std::optional<double> tkv_pct_err;  // fold rows: mean |err| of the fold; overall: MAPE
};

// Per-fold means (per-case first, then per-fold) followed by one overall row. The overall
// dice columns average the fold means; its tkv_pct_err is the MAPE over all cases.
std::vector<SummaryRow> summarize(const std::vector<CaseMetrics>& cases);

std::string format_metrics_csv(const std::vector<CaseMetrics>& cases);
void write_metrics_csv(const std::vector<CaseMetrics>& cases, const std::filesystem::path& path);

// Signed TKV percent error against ground-truth TKV, one marker per case, dashed +-5% band.
std::string tkv_scatter_svg(const std::vector<CaseMetrics>& cases);
std::string tkv_scatter_csv(const std::vector<CaseMetrics>& cases);

using ConvergenceSeries = std::pair<std::string, ConvergenceLog>;
std::string convergence_svg(const std::vector<ConvergenceSeries>& series);
std::string convergence_csv(const std::vector<ConvergenceSeries>& series);

void write_text_file(const std::filesystem::path& path, const std::string& text);

// Shortest round-trip decimal representation.
std::string format_double(double v);

}  // namespace tkvseg
