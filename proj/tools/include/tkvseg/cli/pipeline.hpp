#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tkvseg/cli/config.hpp"
#include "tkvseg/dataset.hpp"
#include "tkvseg/metrics.hpp"
#include "tkvseg/nn.hpp"
#include "tkvseg/report.hpp"
#include "tkvseg/volume.hpp"

namespace tkvseg::cli {

// Resample to the target spacing and map intensities onto [0, 1].
ImageVolume prepare_image(const ImageVolume& raw, const DataConfig& data);

// Configured crop rounded up per axis to the network's spatial multiple (250 -> 256 at
// depth 5); the extra voxels are padding around the centred crop.
Index3 training_crop(const Index3& crop, std::size_t multiple);

// Per-axis inference window: the crop size, shrunk to the volume extent rounded up to
// the network's spatial multiple.
Index3 inference_window(const Index3& extent, const Index3& crop, std::size_t multiple);

// Tiled eval-mode forward over a prepared volume; overlapping logits are averaged.
// Returns the stitched logits as [C, Z, Y, X] flattened in a Tensor.
Tensor<float> stitched_logits(MultiTaskNet<float>& net, const ImageVolume& prepared,
                              const std::string& task, const DataConfig& data);

// Full inference: prepare, tile, stitch, argmax, resample labels back onto `raw`'s grid.
LabelVolume infer_labels(MultiTaskNet<float>& net, const ImageVolume& raw, const std::string& task,
                         const DataConfig& data);

// Dice and TKV of one prediction against ground truth for `task`. The left/right columns
// hold classes 1 and 2 (both class 1 for a two-class task); TKV counts every foreground class.
CaseMetrics case_metrics(const LabelVolume& pred, const LabelVolume& gt, const TaskSpec& task,
                         const std::string& case_id, std::optional<std::size_t> fold);

struct TrainOutputs {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<CaseMetrics> cases;
  std::vector<ConvergenceSeries> convergence;
  std::size_t steps = 0;
};

// Runs the configured fold loop and writes checkpoints, metrics.csv, train_log.csv,
// convergence.{csv,svg} and tkv_scatter.{csv,svg} into config.output_dir.
TrainOutputs run_training(const TrainConfig& config, std::ostream& log);

struct EvalOutputs {
  std::vector<CaseMetrics> cases;
  std::size_t skipped = 0;  // cases without a usable mask or prediction
};

// Evaluates ground-truth records of `task` either by running `checkpoint` or against the
// masks of a prediction manifest (matched by case id). Writes metrics.csv and
// tkv_scatter.{csv,svg} into out_dir.
EvalOutputs run_evaluation(const std::vector<ManifestRecord>& truth, const std::string& task,
                           const std::optional<std::filesystem::path>& checkpoint,
                           const std::optional<std::filesystem::path>& predictions,
                           const DataConfig& data, const std::filesystem::path& out_dir,
                           std::ostream& log);

struct SynthOptions {
  std::size_t count = 4;
  std::uint64_t seed = 0;
  Index3 dims{32, 32, 32};
  double spacing = 1.5;
  std::optional<double> lumpiness;
  std::optional<double> noise_sigma;
  std::optional<double> contact_probability;
};

struct SynthOutputs {
  std::filesystem::path manifest;
  std::vector<ManifestRecord> records;
};

// Paired kidney/liver phantoms, manifest.jsonl and truth.csv (analytic and voxel TKV).
SynthOutputs run_synth(const SynthOptions& options, const std::filesystem::path& out_dir);

// Isotropic resampling of every record, optionally followed by z-cropping. Writes volumes
// and a new manifest into out_dir.
std::filesystem::path run_preprocess(const std::vector<ManifestRecord>& records,
                                     const DataConfig& data, bool crop,
                                     const std::filesystem::path& out_dir);

}  // namespace tkvseg::cli
