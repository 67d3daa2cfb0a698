#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tkvseg/autograd.hpp"
#include "tkvseg/loss.hpp"
#include "tkvseg/nn.hpp"

namespace tkvseg {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <typename T>
struct AdamState {
  AdamConfig hyper;
  std::size_t step = 0;
  std::map<ParamId, Tensor<T>> m;
  std::map<ParamId, Tensor<T>> v;

  AdamState() = default;
  explicit AdamState(AdamConfig config) : hyper(config) {}
};

// Bias-corrected Adam update of every parameter in `params`. Throws ContractError
// naming the first parameter without a gradient.
template <typename T>
void adam_step(ParameterStore<T>& params, const GradMap<T>& grads, AdamState<T>& state);

template <typename T>
struct TaskBatch {
  std::string task;
  Tensor<T> image;     // [B, 1, Z, Y, X]
  LabelTensor labels;  // [B, Z, Y, X]
};

struct StepMetrics {
  std::vector<std::string> tasks;
  std::vector<double> task_losses;
  double total = 0;
};

// One optimization step: a train-mode forward and loss per task, their mean,
// one backward pass and one Adam update.
template <typename T>
StepMetrics train_step(MultiTaskNet<T>& net, std::span<const TaskBatch<T>> batches,
                       const LossConfig& loss, AdamState<T>& adam);

}  // namespace tkvseg
