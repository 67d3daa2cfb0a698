#include "tkvseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

namespace tkvseg {

std::string to_string(LossKind kind) {
  return kind == LossKind::dice ? "dice" : "bootstrap_ce";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "dice") return LossKind::dice;
  if (name == "bootstrap_ce") return LossKind::bootstrap_ce;
  throw ConfigError("unknown loss kind '" + name + "' (expected dice or bootstrap_ce)");
}

void LossConfig::validate() const {
  if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0)) {
    throw ConfigError("bootstrap_fraction must be in (0, 1], got " +
                      std::to_string(bootstrap_fraction));
  }
  if (!std::isfinite(dice_smoothing) || dice_smoothing < 0.0) {
    throw ConfigError("dice_smoothing must be finite and >= 0, got " +
                      std::to_string(dice_smoothing));
  }
}

std::size_t bootstrap_count(std::size_t n, double fraction) {
  if (n == 0) throw ContractError("bootstrap_count: no voxels");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("bootstrap fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  // The slack keeps products such as 0.1 * 70 from flooring to 6.
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

template <typename T>
BootstrapSelection bootstrap_select(std::span<const T> q, double fraction) {
  const std::size_t n = q.size();
  const std::size_t k = bootstrap_count(n, fraction);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&q](std::size_t a, std::size_t b) {
    return q[a] < q[b] || (q[a] == q[b] && a < b);
  };
  BootstrapSelection sel;
  if (k < n) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                     before);
    sel.threshold = static_cast<double>(q[order[k]]);
  } else {
    sel.threshold = std::numeric_limits<double>::infinity();
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  sel.indices = std::move(order);
  return sel;
}

template <typename T>
Tensor<T> one_hot(const LabelTensor& labels, std::size_t num_classes) {
  if (labels.rank() != 4) {
    throw ShapeError("one_hot: labels must be [B, Z, Y, X], got " +
                     shape_to_string(labels.shape()));
  }
  const std::size_t B = labels.dim(0);
  const std::size_t S = labels.numel() / B;
  Tensor<T> out(Shape{B, num_classes, labels.dim(1), labels.dim(2), labels.dim(3)}, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < S; ++i) {
      const std::size_t c = labels[b * S + i];
      if (c >= num_classes) {
        throw ValidationError("one_hot: label " + std::to_string(c) + " outside [0, " +
                              std::to_string(num_classes) + ")");
      }
      out[(b * num_classes + c) * S + i] = T(1);
    }
  }
  return out;
}

namespace {

void validate_one_hot(std::span<const double> sums_per_voxel) {
  for (double s : sums_per_voxel) {
    if (s != 1.0) throw ValidationError("dice_loss: target is not one-hot");
  }
}

}  // namespace

template <typename T>
Var<T> dice_loss(Var<T> probs, const Tensor<T>& target, T smoothing) {
  require_rank5(probs.shape(), "dice_loss");
  if (probs.shape() != target.shape()) {
    throw ShapeError("dice_loss: probabilities " + shape_to_string(probs.shape()) +
                     " vs target " + shape_to_string(target.shape()));
  }
  const Shape& s = probs.shape();
  const std::size_t B = s[0], C = s[1], S = s[2] * s[3] * s[4];
  const T* p = probs.value().data().data();
  const T* g = target.data().data();

  std::vector<double> voxel_sums(B * S, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < S; ++i) {
        const T v = g[(b * C + c) * S + i];
        if (v != T(0) && v != T(1)) throw ValidationError("dice_loss: target entries must be 0 or 1");
        voxel_sums[b * S + i] += static_cast<double>(v);
      }
    }
  }
  validate_one_hot(voxel_sums);

  // Per-class numerator 2I + s and denominator P + G + s.
  auto num = std::make_shared<std::vector<double>>(C, 0.0);
  auto den = std::make_shared<std::vector<double>>(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double inter = 0, psum = 0, gsum = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * S;
      for (std::size_t i = 0; i < S; ++i) {
        const double pv = p[off + i], gv = g[off + i];
        inter += pv * gv;
        psum += pv;
        gsum += gv;
      }
    }
    (*num)[c] = 2.0 * inter + static_cast<double>(smoothing);
    (*den)[c] = psum + gsum + static_cast<double>(smoothing);
  }
  double total = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if ((*den)[c] != 0.0) total += (*num)[c] / (*den)[c];
  }
  const double loss = -total / static_cast<double>(C);

  auto target_copy = std::make_shared<Tensor<T>>(target);
  return probs.graph().record(
      Tensor<T>::scalar(static_cast<T>(loss)), {probs.id()},
      [num, den, target_copy, B, C, S](const Tensor<T>& grad_out,
                                       std::span<Tensor<T>* const> grads) {
        if (!grads[0]) return;
        const double upstream = static_cast<double>(grad_out[0]) / static_cast<double>(C);
        const T* g = target_copy->data().data();
        T* gp = grads[0]->data().data();
        for (std::size_t c = 0; c < C; ++c) {
          const double d = (*den)[c];
          if (d == 0.0) continue;
          // d/dp of -(num / den): -(2 g / den - num / den^2)
          const double ratio = (*num)[c] / (d * d);
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * S;
            for (std::size_t i = 0; i < S; ++i) {
              const double dterm = 2.0 * static_cast<double>(g[off + i]) / d - ratio;
              gp[off + i] += static_cast<T>(-upstream * dterm);
            }
          }
        }
      });
}

template <typename T>
Var<T> bootstrap_ce_loss(Var<T> probs, const LabelTensor& labels, double fraction) {
  require_rank5(probs.shape(), "bootstrap_ce_loss");
  const Shape& s = probs.shape();
  const std::size_t B = s[0], C = s[1], S = s[2] * s[3] * s[4];
  if (labels.shape() != Shape{s[0], s[2], s[3], s[4]}) {
    throw ShapeError("bootstrap_ce_loss: labels " + shape_to_string(labels.shape()) +
                     " do not match probabilities " + shape_to_string(s));
  }
  const T* p = probs.value().data().data();
  const std::size_t N = B * S;
  std::vector<T> q(N);
  auto flat = std::make_shared<std::vector<std::size_t>>(N);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < S; ++i) {
      const std::size_t y = labels[b * S + i];
      if (y >= C) {
        throw ValidationError("bootstrap_ce_loss: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(C) + ")");
      }
      const std::size_t j = (b * C + y) * S + i;
      (*flat)[b * S + i] = j;
      q[b * S + i] = p[j];
    }
  }

  constexpr double kClamp = 1e-12;
  auto sel = std::make_shared<BootstrapSelection>(bootstrap_select<T>(q, fraction));
  const double K = static_cast<double>(sel->indices.size());
  double acc = 0;
  for (std::size_t i : sel->indices) acc += std::log(std::max(static_cast<double>(q[i]), kClamp));
  const double loss = -acc / K;

  auto& graph = probs.graph();
  const NodeId pid = probs.id();
  return graph.record(
      Tensor<T>::scalar(static_cast<T>(loss)), {pid},
      [&graph, pid, sel, flat, K](const Tensor<T>& grad_out, std::span<Tensor<T>* const> grads) {
        if (!grads[0]) return;
        const T* p = graph.value(pid).data().data();
        T* gp = grads[0]->data().data();
        const double upstream = static_cast<double>(grad_out[0]);
        for (std::size_t i : sel->indices) {
          const std::size_t j = (*flat)[i];
          const double pv = static_cast<double>(p[j]);
          if (pv > kClamp) gp[j] += static_cast<T>(-upstream / (K * pv));
        }
      });
}

template <typename T>
Var<T> multitask_loss(std::span<const Var<T>> task_losses) {
  if (task_losses.empty()) throw ContractError("multitask_loss: no task losses");
  return mean_of<T>(task_losses);
}

template <typename T>
Var<T> segmentation_loss(Var<T> logits, const LabelTensor& labels, const LossConfig& config) {
  Var<T> probs = softmax_channel(logits);
  if (config.kind == LossKind::dice) {
    return dice_loss(probs, one_hot<T>(labels, logits.shape()[1]),
                     static_cast<T>(config.dice_smoothing));
  }
  return bootstrap_ce_loss(probs, labels, config.bootstrap_fraction);
}

#define TKVSEG_INSTANTIATE_LOSS(T)                                                  \
  template BootstrapSelection bootstrap_select<T>(std::span<const T>, double);     \
  template Tensor<T> one_hot<T>(const LabelTensor&, std::size_t);                   \
  template Var<T> dice_loss<T>(Var<T>, const Tensor<T>&, T);                        \
  template Var<T> bootstrap_ce_loss<T>(Var<T>, const LabelTensor&, double);         \
  template Var<T> multitask_loss<T>(std::span<const Var<T>>);                       \
  template Var<T> segmentation_loss<T>(Var<T>, const LabelTensor&, const LossConfig&);

TKVSEG_INSTANTIATE_LOSS(float)
TKVSEG_INSTANTIATE_LOSS(double)

#undef TKVSEG_INSTANTIATE_LOSS

}  // namespace tkvseg
