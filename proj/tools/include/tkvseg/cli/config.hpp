#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tkvseg/loss.hpp"
#include "tkvseg/nn.hpp"
#include "tkvseg/optim.hpp"
#include "tkvseg/preprocess.hpp"

namespace tkvseg::cli {

struct DataConfig {
  std::vector<std::filesystem::path> manifests;
  double target_spacing = kTargetSpacingMm;
  double window_lo = -200.0;
  double window_hi = 500.0;
  Index3 crop{144, 250, 250};
  double z_overlap = 0.0;          // training crops
  double inference_overlap = 0.5;  // tiles at evaluation/inference, every axis
  bool augment = true;
  AugmentRanges augment_ranges;
};

struct ScheduleConfig {
  std::size_t epochs = 100;
  std::size_t eval_interval = 1;  // epochs between validation passes
  std::optional<std::size_t> max_steps;
  std::size_t batch_size = 1;
};

enum class FoldMode { cv, none };

struct FoldConfig {
  FoldMode mode = FoldMode::cv;
  std::size_t k = 3;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  std::optional<std::size_t> only;    // train a single fold
};

struct TrainConfig {
  std::string preset;
  NetConfig network;
  LossConfig loss;
  AdamConfig optimizer;
  DataConfig data;
  ScheduleConfig schedule;
  FoldConfig folds;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";

  // Task whose validation metrics drive the reports (the first network task).
  const TaskSpec& primary_task() const { return network.tasks.front(); }
  std::uint64_t fold_seed() const { return folds.seed.value_or(seed); }

  // Module contracts only; paths are checked by check_paths(). Commands other than
  // training may run without manifests.
  void validate(bool require_manifests = true) const;
  void check_paths() const;
};

// "3d-single", "mt-dice", "mt-bootstrap".
std::vector<std::string> preset_names();
TrainConfig preset_config(const std::string& name);

// JSON document; an optional "preset" key is applied first and the remaining keys
// override it. Relative paths resolve against `base_dir`. Unknown keys are rejected.
TrainConfig parse_train_config(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                               bool require_manifests = true);
TrainConfig load_train_config(const std::filesystem::path& path, bool require_manifests = true);

// Overrides the run seed, which also seeds the network initialization.
void set_seed(TrainConfig& config, std::uint64_t seed);

nlohmann::json to_json(const TrainConfig& config);

}  // namespace tkvseg::cli
