#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tkvseg/autograd.hpp"

namespace tkvseg {

// One segmentation task served by its own decoder and head. Class 0 is background.
struct TaskSpec {
  std::string name;
  std::vector<std::string> class_names;

  std::size_t num_classes() const noexcept { return class_names.size(); }
  void validate() const;

  bool operator==(const TaskSpec&) const = default;
};

TaskSpec kidney_task();  // background, left_kidney, right_kidney
TaskSpec liver_task();   // background, liver

// Named trainable tensors, addressed by dense ParamId.
template <typename T>
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor<T> value);

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  Tensor<T>& value(ParamId id) { return values_.at(id); }
  const Tensor<T>& value(ParamId id) const { return values_.at(id); }
  std::optional<ParamId> find(std::string_view name) const;
  std::size_t element_count() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

struct NetConfig {
  std::size_t depth = 5;  // resolution levels; depth - 1 poolings
  std::size_t base_channels = 16;
  std::size_t max_channels = 256;
  std::vector<TaskSpec> tasks;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::size_t> channel_schedule() const;
};

struct ConvLayer {
  ParamId kernel = 0;
  ParamId bias = 0;
};

struct BatchNormLayer {
  ParamId gamma = 0;
  ParamId beta = 0;
  std::size_t state = 0;  // index into the net's running statistics
};

// conv 3x3x3 -> batch norm -> ReLU, twice.
struct ConvBlock {
  ConvLayer conv1;
  BatchNormLayer bn1;
  ConvLayer conv2;
  BatchNormLayer bn2;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

// Stride-2 up-convolution, skip concatenation, then a ConvBlock.
struct DeconvBlock {
  ConvLayer up;
  ConvBlock block;
};

struct TaskBranch {
  TaskSpec spec;
  std::vector<DeconvBlock> decoder;  // decoder[l] restores resolution level l
  ConvLayer head;                    // 1x1x1
};

// Shared encoder with one decoder and head per task.
template <typename T>
class MultiTaskNet {
 public:
  static MultiTaskNet build(const NetConfig& config);

  // logits [B, C_task, Z, Y, X] for an input [B, 1, Z, Y, X].
  Var<T> forward(Graph<T>& graph, const Tensor<T>& input, std::string_view task, Mode mode);
  Var<T> forward(Graph<T>& graph, Var<T> input, std::string_view task, Mode mode);

  const NetConfig& config() const noexcept { return config_; }
  const std::vector<TaskSpec>& tasks() const noexcept { return config_.tasks; }
  const TaskSpec& task(std::string_view name) const;
  std::size_t depth() const noexcept { return config_.depth; }

  // Spatial extents must be multiples of this.
  std::size_t spatial_multiple() const noexcept { return std::size_t{1} << (config_.depth - 1); }

  ParameterStore<T>& params() noexcept { return params_; }
  const ParameterStore<T>& params() const noexcept { return params_; }

  std::vector<BatchNormState<T>>& batchnorm_states() noexcept { return bn_states_; }
  const std::vector<BatchNormState<T>>& batchnorm_states() const noexcept { return bn_states_; }
  const std::vector<std::string>& batchnorm_names() const noexcept { return bn_names_; }

  std::vector<ParamId> encoder_parameter_ids() const;
  std::vector<ParamId> task_parameter_ids(std::string_view task) const;

 private:
  explicit MultiTaskNet(NetConfig config) : config_(std::move(config)) {}

  ConvLayer make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                      std::uint64_t& stream);
  BatchNormLayer make_bn(const std::string& name, std::size_t channels);
  ConvBlock make_block(const std::string& name, std::size_t cin, std::size_t cout,
                       std::uint64_t& stream);

  Var<T> apply_block(Graph<T>& graph, const ConvBlock& block, Var<T> x, Mode mode);
  Var<T> apply_conv(Graph<T>& graph, const ConvLayer& layer, Var<T> x);
  const TaskBranch& branch(std::string_view task) const;

  NetConfig config_;
  ParameterStore<T> params_;
  std::vector<BatchNormState<T>> bn_states_;
  std::vector<std::string> bn_names_;
  std::vector<ConvBlock> encoder_;
  std::vector<TaskBranch> branches_;
  std::size_t encoder_param_end_ = 0;  // encoder params occupy [0, encoder_param_end_)
};

// Closed-form trainable parameter count for a config.
std::size_t expected_parameter_count(const NetConfig& config);

// Edge length, in input voxels, of the encoder's cumulative receptive field.
std::size_t receptive_field(std::size_t depth);

}  // namespace tkvseg
