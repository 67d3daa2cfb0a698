#include "tkvseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string_view>

namespace tkvseg {

namespace {

constexpr char kMagic[8] = {'T', 'K', 'V', 'S', 'E', 'G', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void tensor(std::string_view name, const Tensor<float>& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) u32(static_cast<std::uint32_t>(e));
    for (float v : t.data()) f32(v);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void expect_magic() {
    need(sizeof(kMagic));
    if (std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) != 0) {
      throw IntegrityError("checkpoint: bad magic");
    }
    pos_ += sizeof(kMagic);
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError("checkpoint: truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void load_record(Reader& in, const std::string& expected_name, Tensor<float>& target) {
  const std::string name = in.str();
  if (name != expected_name) {
    throw IntegrityError("checkpoint: expected record '" + expected_name + "', found '" + name +
                         "'");
  }
  const std::uint32_t rank = in.u32();
  Shape shape(rank);
  for (auto& e : shape) e = in.u32();
  if (shape != target.shape()) {
    throw IntegrityError("checkpoint: record '" + name + "' has shape " + shape_to_string(shape) +
                         ", network expects " + shape_to_string(target.shape()));
  }
  for (auto& v : target.data()) v = in.f32();
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const MultiTaskNet<float>& net) {
  static_assert(std::numeric_limits<float>::is_iec559, "checkpoint requires IEEE-754 floats");
  Writer out;
  out.raw(kMagic, sizeof(kMagic));
  out.u32(kCheckpointVersion);
  const NetConfig& cfg = net.config();
  out.u32(static_cast<std::uint32_t>(cfg.depth));
  out.u32(static_cast<std::uint32_t>(cfg.base_channels));
  out.u32(static_cast<std::uint32_t>(cfg.max_channels));
  const auto schedule = cfg.channel_schedule();
  out.u32(static_cast<std::uint32_t>(schedule.size()));
  for (std::size_t c : schedule) out.u32(static_cast<std::uint32_t>(c));
  out.u32(static_cast<std::uint32_t>(cfg.tasks.size()));
  for (const auto& task : cfg.tasks) {
    out.str(task.name);
    out.u32(static_cast<std::uint32_t>(task.num_classes()));
    for (const auto& c : task.class_names) out.str(c);
  }
  const auto& params = net.params();
  const auto& bn = net.batchnorm_states();
  out.u32(static_cast<std::uint32_t>(params.size() + 2 * bn.size()));
  for (ParamId id = 0; id < params.size(); ++id) out.tensor(params.name(id), params.value(id));
  for (std::size_t i = 0; i < bn.size(); ++i) {
    out.tensor(net.batchnorm_names()[i] + ".running_mean", bn[i].running_mean);
    out.tensor(net.batchnorm_names()[i] + ".running_var", bn[i].running_var);
  }
  return out.take();
}

MultiTaskNet<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.expect_magic();
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
  }
  NetConfig cfg;
  cfg.depth = in.u32();
  cfg.base_channels = in.u32();
  cfg.max_channels = in.u32();
  const std::uint32_t levels = in.u32();
  std::vector<std::size_t> schedule(levels);
  for (auto& c : schedule) c = in.u32();
  const std::uint32_t n_tasks = in.u32();
  if (n_tasks > 4) throw IntegrityError("checkpoint: implausible task count");
  for (std::uint32_t t = 0; t < n_tasks; ++t) {
    TaskSpec task;
    task.name = in.str();
    const std::uint32_t n_classes = in.u32();
    if (n_classes > 255) throw IntegrityError("checkpoint: implausible class count");
    for (std::uint32_t c = 0; c < n_classes; ++c) task.class_names.push_back(in.str());
    cfg.tasks.push_back(std::move(task));
  }
  MultiTaskNet<float> net = [&] {
    try {
      return MultiTaskNet<float>::build(cfg);
    } catch (const ConfigError& e) {
      throw IntegrityError(std::string("checkpoint: invalid network header: ") + e.what());
    }
  }();
  if (cfg.channel_schedule() != schedule) {
    throw IntegrityError("checkpoint: channel schedule disagrees with depth/base/max");
  }
  auto& params = net.params();
  auto& bn = net.batchnorm_states();
  const std::uint32_t records = in.u32();
  if (records != params.size() + 2 * bn.size()) {
    throw IntegrityError("checkpoint: expected " + std::to_string(params.size() + 2 * bn.size()) +
                         " records, header says " + std::to_string(records));
  }
  for (ParamId id = 0; id < params.size(); ++id) load_record(in, params.name(id), params.value(id));
  for (std::size_t i = 0; i < bn.size(); ++i) {
    load_record(in, net.batchnorm_names()[i] + ".running_mean", bn[i].running_mean);
    load_record(in, net.batchnorm_names()[i] + ".running_var", bn[i].running_var);
  }
  if (!in.at_end()) throw IntegrityError("checkpoint: trailing bytes");
  return net;
}

void save_checkpoint(const MultiTaskNet<float>& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

MultiTaskNet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tkvseg
