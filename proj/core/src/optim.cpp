#include "tkvseg/optim.hpp"

#include <cmath>

namespace tkvseg {

void AdamConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
}

template <typename T>
void adam_step(ParameterStore<T>& params, const GradMap<T>& grads, AdamState<T>& state) {
  for (ParamId id = 0; id < params.size(); ++id) {
    auto it = grads.find(id);
    if (it == grads.end()) {
      throw ContractError("adam_step: no gradient for parameter '" + params.name(id) + "'");
    }
    if (it->second.shape() != params.value(id).shape()) {
      throw ContractError("adam_step: gradient shape mismatch for parameter '" + params.name(id) +
                          "'");
    }
  }
  ++state.step;
  const auto& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (ParamId id = 0; id < params.size(); ++id) {
    Tensor<T>& w = params.value(id);
    const Tensor<T>& g = grads.at(id);
    auto [mi, m_new] = state.m.try_emplace(id, w.shape(), T(0));
    auto [vi, v_new] = state.v.try_emplace(id, w.shape(), T(0));
    Tensor<T>& m = mi->second;
    Tensor<T>& v = vi->second;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mn = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * gi;
      const double vn = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mn);
      v[i] = static_cast<T>(vn);
      const double m_hat = mn / correction1;
      const double v_hat = vn / correction2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - h.lr * m_hat / (std::sqrt(v_hat) + h.eps));
    }
  }
}

template <typename T>
StepMetrics train_step(MultiTaskNet<T>& net, std::span<const TaskBatch<T>> batches,
                       const LossConfig& loss, AdamState<T>& adam) {
  if (batches.empty()) throw ContractError("train_step: no task batches");
  Graph<T> graph;
  std::vector<Var<T>> losses;
  StepMetrics metrics;
  for (const TaskBatch<T>& batch : batches) {
    Var<T> logits = net.forward(graph, batch.image, batch.task, Mode::train);
    Var<T> task_loss = segmentation_loss(logits, batch.labels, loss);
    losses.push_back(task_loss);
    metrics.tasks.push_back(batch.task);
    metrics.task_losses.push_back(static_cast<double>(task_loss.value()[0]));
  }
  Var<T> total = multitask_loss<T>(losses);
  metrics.total = static_cast<double>(total.value()[0]);
  if (!std::isfinite(metrics.total)) {
    throw NumericError("non-finite training loss", adam.step + 1);
  }
  GradMap<T> grads = graph.backward(total);
  adam_step(net.params(), grads, adam);
  return metrics;
}

template void adam_step<float>(ParameterStore<float>&, const GradMap<float>&, AdamState<float>&);
template void adam_step<double>(ParameterStore<double>&, const GradMap<double>&,
                                AdamState<double>&);
template StepMetrics train_step<float>(MultiTaskNet<float>&, std::span<const TaskBatch<float>>,
                                       const LossConfig&, AdamState<float>&);
template StepMetrics train_step<double>(MultiTaskNet<double>&, std::span<const TaskBatch<double>>,
                                        const LossConfig&, AdamState<double>&);

}  // namespace tkvseg
