#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tkvseg/autograd.hpp"

namespace tkvseg {

using LabelTensor = Tensor<std::uint8_t>;

enum class LossKind { dice, bootstrap_ce };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::bootstrap_ce;
  double bootstrap_fraction = 0.1;  // K / N
  double dice_smoothing = 0.0;

  void validate() const;
};

// The K hardest voxels of a bootstrapped cross-entropy.
struct BootstrapSelection {
  std::vector<std::size_t> indices;  // ascending voxel index, size K
  double threshold = 0;              // (K+1)-th smallest probability, +inf when K == N
};

// K = max(1, floor(fraction * n)).
std::size_t bootstrap_count(std::size_t n, double fraction);

// Exactly K voxels with the smallest true-class probability; ties go to the lower index.
template <typename T>
BootstrapSelection bootstrap_select(std::span<const T> true_class_probs, double fraction);

// [B, Z, Y, X] class ids -> [B, C, Z, Y, X] indicator tensor.
template <typename T>
Tensor<T> one_hot(const LabelTensor& labels, std::size_t num_classes);

// Multi-class soft dice:
//   L = -(1/C) sum_c (2 sum_i p_ic g_ic + s) / (sum_i p_ic + sum_i g_ic + s)
// A class whose denominator is zero contributes nothing. With s = 0 this includes
// classes absent from the target, whatever mass the prediction puts on them.
template <typename T>
Var<T> dice_loss(Var<T> probs, const Tensor<T>& target_onehot, T smoothing);

// Cross-entropy averaged over the bootstrap selection. The selection is a constant
// of the backward pass; probabilities are clamped at 1e-12 before the log.
template <typename T>
Var<T> bootstrap_ce_loss(Var<T> probs, const LabelTensor& labels, double fraction);

// Mean of per-task losses.
template <typename T>
Var<T> multitask_loss(std::span<const Var<T>> task_losses);

// softmax over channels followed by the configured loss.
template <typename T>
Var<T> segmentation_loss(Var<T> logits, const LabelTensor& labels, const LossConfig& config);

}  // namespace tkvseg
