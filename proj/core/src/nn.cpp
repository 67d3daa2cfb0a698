#include "tkvseg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "tkvseg/random.hpp"

namespace tkvseg {

void TaskSpec::validate() const {
  if (name.empty()) throw ConfigError("task name must not be empty");
  if (class_names.size() < 2) {
    throw ConfigError("task '" + name + "' needs at least 2 classes, got " +
                      std::to_string(class_names.size()));
  }
  if (class_names.size() > 255) throw ConfigError("task '" + name + "' has too many classes");
  std::set<std::string> seen;
  for (const auto& c : class_names) {
    if (!seen.insert(c).second) {
      throw ConfigError("task '" + name + "' repeats class name '" + c + "'");
    }
  }
}

TaskSpec kidney_task() { return {"kidney", {"background", "left_kidney", "right_kidney"}}; }
TaskSpec liver_task() { return {"liver", {"background", "liver"}}; }

template <typename T>
ParamId ParameterStore<T>::add(std::string name, Tensor<T> value) {
  if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

template <typename T>
std::optional<ParamId> ParameterStore<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParameterStore<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

void NetConfig::validate() const {
  if (depth < 2) throw ConfigError("network depth must be >= 2, got " + std::to_string(depth));
  if (depth > 8) throw ConfigError("network depth must be <= 8, got " + std::to_string(depth));
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (max_channels < base_channels) throw ConfigError("max_channels must be >= base_channels");
  if (tasks.empty() || tasks.size() > 4) {
    throw ConfigError("between 1 and 4 tasks required, got " + std::to_string(tasks.size()));
  }
  std::set<std::string> names;
  for (const auto& t : tasks) {
    t.validate();
    if (!names.insert(t.name).second) throw ConfigError("duplicate task name '" + t.name + "'");
  }
}

std::vector<std::size_t> NetConfig::channel_schedule() const {
  std::vector<std::size_t> ch(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    ch[l] = std::min(max_channels, base_channels << l);
  }
  return ch;
}

namespace {

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t k) {
  return cin * cout * k * k * k + cout;
}

std::size_t block_params(std::size_t cin, std::size_t cout) {
  return conv_params(cin, cout, 3) + 2 * cout + conv_params(cout, cout, 3) + 2 * cout;
}

}  // namespace

std::size_t expected_parameter_count(const NetConfig& config) {
  const auto ch = config.channel_schedule();
  std::size_t n = 0;
  for (std::size_t l = 0; l < config.depth; ++l) n += block_params(l == 0 ? 1 : ch[l - 1], ch[l]);
  for (const auto& task : config.tasks) {
    for (std::size_t l = 0; l + 1 < config.depth; ++l) {
      n += ch[l + 1] * ch[l] * 8 + ch[l];  // up-convolution
      n += block_params(2 * ch[l], ch[l]);
    }
    n += conv_params(ch[0], task.num_classes(), 1);
  }
  return n;
}

std::size_t receptive_field(std::size_t depth) {
  if (depth < 1) throw ConfigError("receptive_field: depth must be >= 1");
  std::size_t field = 1, jump = 1;
  for (std::size_t level = 0; level < depth; ++level) {
    field += 2 * 2 * jump;  // two 3x3x3 convolutions
    if (level + 1 < depth) {
      field += jump;  // 2x2x2 pooling
      jump *= 2;
    }
  }
  return field;
}

template <typename T>
ConvLayer MultiTaskNet<T>::make_conv(const std::string& name, std::size_t cin, std::size_t cout,
                                     std::size_t k, std::uint64_t& stream) {
  std::mt19937_64 rng(mix_seed(config_.seed, stream++));
  const double fan_in = static_cast<double>(cin * k * k * k);
  const double bound = k == 1 ? 1.0 / std::sqrt(fan_in) : std::sqrt(6.0 / fan_in);
  ConvLayer layer;
  layer.kernel = params_.add(name + ".weight",
                             Tensor<T>::uniform(Shape{cout, cin, k, k, k}, T(-bound), T(bound), rng));
  layer.bias = params_.add(name + ".bias", Tensor<T>(Shape{cout}, T(0)));
  return layer;
}

template <typename T>
BatchNormLayer MultiTaskNet<T>::make_bn(const std::string& name, std::size_t channels) {
  BatchNormLayer layer;
  layer.gamma = params_.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)));
  layer.beta = params_.add(name + ".beta", Tensor<T>(Shape{channels}, T(0)));
  layer.state = bn_states_.size();
  bn_states_.emplace_back(channels);
  bn_names_.push_back(name);
  return layer;
}

template <typename T>
ConvBlock MultiTaskNet<T>::make_block(const std::string& name, std::size_t cin, std::size_t cout,
                                      std::uint64_t& stream) {
  ConvBlock block;
  block.in_channels = cin;
  block.out_channels = cout;
  block.conv1 = make_conv(name + ".conv1", cin, cout, 3, stream);
  block.bn1 = make_bn(name + ".bn1", cout);
  block.conv2 = make_conv(name + ".conv2", cout, cout, 3, stream);
  block.bn2 = make_bn(name + ".bn2", cout);
  return block;
}

template <typename T>
MultiTaskNet<T> MultiTaskNet<T>::build(const NetConfig& config) {
  config.validate();
  MultiTaskNet net(config);
  const auto ch = config.channel_schedule();
  std::uint64_t stream = 0;
  for (std::size_t l = 0; l < config.depth; ++l) {
    net.encoder_.push_back(
        net.make_block("encoder." + std::to_string(l), l == 0 ? 1 : ch[l - 1], ch[l], stream));
  }
  net.encoder_param_end_ = net.params_.size();

  for (const auto& spec : config.tasks) {
    TaskBranch br;
    br.spec = spec;
    br.decoder.resize(config.depth - 1);
    for (std::size_t l = config.depth - 1; l-- > 0;) {
      const std::string prefix = "decoder." + spec.name + "." + std::to_string(l);
      DeconvBlock& dec = br.decoder[l];
      std::mt19937_64 rng(mix_seed(config.seed, stream++));
      const double bound = std::sqrt(6.0 / static_cast<double>(ch[l + 1]));
      dec.up.kernel = net.params_.add(
          prefix + ".up.weight",
          Tensor<T>::uniform(Shape{ch[l + 1], ch[l], 2, 2, 2}, T(-bound), T(bound), rng));
      dec.up.bias = net.params_.add(prefix + ".up.bias", Tensor<T>(Shape{ch[l]}, T(0)));
      dec.block = net.make_block(prefix + ".block", 2 * ch[l], ch[l], stream);
    }
    br.head = net.make_conv("head." + spec.name, ch[0], spec.num_classes(), 1, stream);
    net.branches_.push_back(std::move(br));
  }
  return net;
}

template <typename T>
const TaskBranch& MultiTaskNet<T>::branch(std::string_view task) const {
  for (const auto& br : branches_) {
    if (br.spec.name == task) return br;
  }
  throw ConfigError("unknown task '" + std::string(task) + "'");
}

template <typename T>
const TaskSpec& MultiTaskNet<T>::task(std::string_view name) const {
  return branch(name).spec;
}

template <typename T>
Var<T> MultiTaskNet<T>::apply_conv(Graph<T>& graph, const ConvLayer& layer, Var<T> x) {
  return conv3d(x, graph.parameter(layer.kernel, params_.value(layer.kernel)),
                graph.parameter(layer.bias, params_.value(layer.bias)), Padding::same);
}

template <typename T>
Var<T> MultiTaskNet<T>::apply_block(Graph<T>& graph, const ConvBlock& block, Var<T> x, Mode mode) {
  auto bn = [&](const BatchNormLayer& layer, Var<T> v) {
    return batchnorm(v, graph.parameter(layer.gamma, params_.value(layer.gamma)),
                     graph.parameter(layer.beta, params_.value(layer.beta)), mode,
                     bn_states_[layer.state]);
  };
  x = relu(bn(block.bn1, apply_conv(graph, block.conv1, x)));
  return relu(bn(block.bn2, apply_conv(graph, block.conv2, x)));
}

template <typename T>
Var<T> MultiTaskNet<T>::forward(Graph<T>& graph, const Tensor<T>& input, std::string_view task,
                                Mode mode) {
  return forward(graph, graph.constant(input), task, mode);
}

template <typename T>
Var<T> MultiTaskNet<T>::forward(Graph<T>& graph, Var<T> input, std::string_view task, Mode mode) {
  const TaskBranch& br = branch(task);
  const Shape& s = input.shape();
  require_rank5(s, "network input");
  if (s[1] != 1) {
    throw ShapeError("network input must have 1 channel, got " + std::to_string(s[1]));
  }
  const std::size_t multiple = spatial_multiple();
  const char* axes[] = {"z", "y", "x"};
  for (int a = 0; a < 3; ++a) {
    if (s[2 + a] % multiple != 0) {
      throw ShapeError("network input extent along " + std::string(axes[a]) + " (" +
                       std::to_string(s[2 + a]) + ") is not a multiple of " +
                       std::to_string(multiple) + " required by depth " +
                       std::to_string(config_.depth));
    }
  }

  std::vector<Var<T>> skips;
  Var<T> x = input;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    if (l > 0) x = maxpool3d(x);
    x = apply_block(graph, encoder_[l], x, mode);
    if (l + 1 < encoder_.size()) skips.push_back(x);
  }
  for (std::size_t l = br.decoder.size(); l-- > 0;) {
    const DeconvBlock& dec = br.decoder[l];
    Var<T> up = upconv3d(x, graph.parameter(dec.up.kernel, params_.value(dec.up.kernel)),
                         graph.parameter(dec.up.bias, params_.value(dec.up.bias)));
    x = apply_block(graph, dec.block, concat_channel(skips[l], up), mode);
  }
  return apply_conv(graph, br.head, x);
}

template <typename T>
std::vector<ParamId> MultiTaskNet<T>::encoder_parameter_ids() const {
  std::vector<ParamId> ids(encoder_param_end_);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

template <typename T>
std::vector<ParamId> MultiTaskNet<T>::task_parameter_ids(std::string_view task) const {
  const TaskBranch& br = branch(task);
  std::vector<ParamId> ids;
  auto add_conv = [&ids](const ConvLayer& c) {
    ids.push_back(c.kernel);
    ids.push_back(c.bias);
  };
  auto add_block = [&](const ConvBlock& b) {
    add_conv(b.conv1);
    ids.push_back(b.bn1.gamma);
    ids.push_back(b.bn1.beta);
    add_conv(b.conv2);
    ids.push_back(b.bn2.gamma);
    ids.push_back(b.bn2.beta);
  };
  for (const auto& dec : br.decoder) {
    add_conv(dec.up);
    add_block(dec.block);
  }
  add_conv(br.head);
  std::sort(ids.begin(), ids.end());
  return ids;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class MultiTaskNet<float>;
template class MultiTaskNet<double>;

}  // namespace tkvseg
