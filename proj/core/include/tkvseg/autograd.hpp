#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "tkvseg/tensor.hpp"

namespace tkvseg {

using NodeId = std::size_t;
using ParamId = std::size_t;

template <typename T>
class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; valid until the graph is reset.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, NodeId id) : graph_(graph), id_(id) {}

  NodeId id() const noexcept { return id_; }
  Graph<T>& graph() const { return *graph_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Graph<T>* graph_ = nullptr;
  NodeId id_ = 0;
};

// Parameter id -> gradient of the same shape as the parameter.
template <typename T>
using GradMap = std::map<ParamId, Tensor<T>>;

// Tape of operations for reverse-mode differentiation. Nodes are stored in recording
// order, which is a valid topological order because inputs must already exist.
template <typename T>
class Graph {
 public:
  // Receives the upstream gradient and one accumulator per input. Accumulators are
  // null for inputs that do not require a gradient; rules must add, never assign.
  using BackwardFn =
      std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);

  // Registers a trainable leaf. The same ParamId always maps to the same node.
  Var<T> parameter(ParamId id, const Tensor<T>& value);

  Var<T> record(Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward);

  // Reverse sweep from a scalar root. Returns gradients for every registered parameter
  // (zeros for parameters the root does not depend on).
  GradMap<T> backward(Var<T> root);

  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  bool backward_done() const noexcept { return backward_done_; }

  // Sorted ids of parameters registered on this tape.
  std::vector<ParamId> parameter_ids() const;

 private:
  struct Node {
    Tensor<T> value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::map<ParamId, NodeId> param_nodes_;
  bool backward_done_ = false;
};

enum class Padding { same, valid };
enum class Mode { train, eval };

// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}

  std::size_t channels() const { return running_mean.numel(); }
};

// Cross-correlation over (z, y, x). kernel: [Cout, Cin, kz, ky, kx], bias: [Cout].
template <typename T>
Var<T> conv3d(Var<T> input, Var<T> kernel, Var<T> bias, Padding padding = Padding::same);

// Non-overlapping 2x2x2 max pooling. Ties route the gradient to the first element in scan order.
template <typename T>
Var<T> maxpool3d(Var<T> input);

// Stride-2 transposed convolution. kernel: [Cin, Cout, 2, 2, 2], bias: [Cout].
template <typename T>
Var<T> upconv3d(Var<T> input, Var<T> kernel, Var<T> bias);

// Per-channel normalization over (B, Z, Y, X). Train mode updates `state` in place.
template <typename T>
Var<T> batchnorm(Var<T> input, Var<T> gamma, Var<T> beta, Mode mode, BatchNormState<T>& state);

template <typename T>
Var<T> relu(Var<T> input);

// Softmax over the channel axis of a (B, C, Z, Y, X) tensor.
template <typename T>
Var<T> softmax_channel(Var<T> input);

template <typename T>
Var<T> concat_channel(Var<T> a, Var<T> b);

// Channels [begin, begin + count) of a (B, C, Z, Y, X) tensor.
template <typename T>
Var<T> slice_channel(Var<T> input, std::size_t begin, std::size_t count);

template <typename T>
Var<T> sum(Var<T> input);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> input, T factor);

// Arithmetic mean of scalar nodes.
template <typename T>
Var<T> mean_of(std::span<const Var<T>> scalars);

}  // namespace tkvseg
