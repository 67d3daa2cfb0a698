#include "tkvseg/cli/config.hpp"

#include <fstream>
#include <set>

#include "tkvseg/errors.hpp"

namespace tkvseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Rejects keys outside `allowed` so that typos do not silently fall back to defaults.
void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string("config: '") + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) {
      throw ConfigError(std::string("config: unknown key '") + key + "' in '" + section + "'");
    }
  }
}

template <typename V>
void read(const json& obj, const char* key, V& out, const char* section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: '") + section + "." + key + "' has the wrong type");
  }
}

Index3 read_index3(const json& v, const char* what) {
  if (!v.is_array() || v.size() != 3) {
    throw ConfigError(std::string("config: '") + what + "' must be [z, y, x]");
  }
  Index3 out{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (!v[a].is_number_unsigned() || v[a].get<std::size_t>() == 0) {
      throw ConfigError(std::string("config: '") + what + "' entries must be positive integers");
    }
    out[a] = v[a].get<std::size_t>();
  }
  return out;
}

TaskSpec read_task(const json& v) {
  if (v.is_string()) {
    const auto name = v.get<std::string>();
    if (name == "kidney") return kidney_task();
    if (name == "liver") return liver_task();
    throw ConfigError("config: unknown built-in task '" + name +
                      "'; give {\"name\": ..., \"classes\": [...]} instead");
  }
  check_keys(v, "network.tasks[]", {"name", "classes"});
  TaskSpec t;
  read(v, "name", t.name, "network.tasks[]");
  read(v, "classes", t.class_names, "network.tasks[]");
  return t;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

}  // namespace

std::vector<std::string> preset_names() { return {"3d-single", "mt-dice", "mt-bootstrap"}; }

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "3d-single") {
    c.network.tasks = {kidney_task()};
    c.loss.kind = LossKind::dice;
  } else if (name == "mt-dice") {
    c.network.tasks = {kidney_task(), liver_task()};
    c.loss.kind = LossKind::dice;
  } else if (name == "mt-bootstrap") {
    c.network.tasks = {kidney_task(), liver_task()};
    c.loss.kind = LossKind::bootstrap_ce;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected 3d-single, mt-dice or mt-bootstrap)");
  }
  return c;
}

void TrainConfig::validate(bool require_manifests) const {
  network.validate();
  loss.validate();
  optimizer.validate();
  data.augment_ranges.validate();
  if (!(data.target_spacing > 0)) throw ConfigError("data.target_spacing must be positive");
  if (!(data.window_hi > data.window_lo)) throw ConfigError("data.window must satisfy hi > lo");
  if (!(data.z_overlap >= 0 && data.z_overlap < 1)) throw ConfigError("data.z_overlap must be in [0, 1)");
  if (!(data.inference_overlap >= 0 && data.inference_overlap < 1)) {
    throw ConfigError("data.inference_overlap must be in [0, 1)");
  }
  if (schedule.epochs == 0) throw ConfigError("schedule.epochs must be >= 1");
  if (schedule.eval_interval == 0) throw ConfigError("schedule.eval_interval must be >= 1");
  if (schedule.batch_size == 0) throw ConfigError("schedule.batch_size must be >= 1");
  if (schedule.max_steps && *schedule.max_steps == 0) throw ConfigError("schedule.max_steps must be >= 1");
  if (folds.mode == FoldMode::cv) {
    if (folds.k < 2) throw ConfigError("folds.k must be >= 2");
    if (folds.only && *folds.only >= folds.k) throw ConfigError("folds.only must be < folds.k");
  }
  if (require_manifests && data.manifests.empty()) throw ConfigError("data.manifests must list at least one manifest");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

void TrainConfig::check_paths() const {
  for (const auto& m : data.manifests) {
    if (!fs::exists(m)) throw ConfigError("manifest not found: " + m.string());
  }
}

TrainConfig parse_train_config(const json& doc, const fs::path& base_dir, bool require_manifests) {
  check_keys(doc, "<root>",
             {"preset", "network", "loss", "optimizer", "data", "schedule", "folds", "seed",
              "output_dir"});
  TrainConfig c;
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw ConfigError("config: 'preset' must be a string");
    c = preset_config(doc["preset"].get<std::string>());
  } else {
    c.network.tasks = {kidney_task(), liver_task()};
  }

  read(doc, "seed", c.seed, "<root>");
  set_seed(c, c.seed);
  if (doc.contains("output_dir")) {
    std::string out;
    read(doc, "output_dir", out, "<root>");
    c.output_dir = resolve(base_dir, out);
  }

  if (doc.contains("network")) {
    const json& n = doc["network"];
    check_keys(n, "network", {"depth", "base_channels", "max_channels", "tasks"});
    read(n, "depth", c.network.depth, "network");
    read(n, "base_channels", c.network.base_channels, "network");
    read(n, "max_channels", c.network.max_channels, "network");
    if (n.contains("tasks")) {
      if (!n["tasks"].is_array()) throw ConfigError("config: 'network.tasks' must be an array");
      c.network.tasks.clear();
      for (const auto& t : n["tasks"]) c.network.tasks.push_back(read_task(t));
    }
  }
  if (doc.contains("loss")) {
    const json& l = doc["loss"];
    check_keys(l, "loss", {"kind", "bootstrap_fraction", "dice_smoothing"});
    if (l.contains("kind")) {
      std::string kind;
      read(l, "kind", kind, "loss");
      c.loss.kind = loss_kind_from_string(kind);
    }
    read(l, "bootstrap_fraction", c.loss.bootstrap_fraction, "loss");
    read(l, "dice_smoothing", c.loss.dice_smoothing, "loss");
  }
  if (doc.contains("optimizer")) {
    const json& o = doc["optimizer"];
    check_keys(o, "optimizer", {"lr", "beta1", "beta2", "eps"});
    read(o, "lr", c.optimizer.lr, "optimizer");
    read(o, "beta1", c.optimizer.beta1, "optimizer");
    read(o, "beta2", c.optimizer.beta2, "optimizer");
    read(o, "eps", c.optimizer.eps, "optimizer");
  }
  if (doc.contains("data")) {
    const json& d = doc["data"];
    check_keys(d, "data",
               {"manifests", "target_spacing", "window", "crop", "z_overlap", "inference_overlap",
                "augment"});
    if (d.contains("manifests")) {
      std::vector<std::string> paths;
      read(d, "manifests", paths, "data");
      c.data.manifests.clear();
      for (const auto& p : paths) c.data.manifests.push_back(resolve(base_dir, p));
    }
    read(d, "target_spacing", c.data.target_spacing, "data");
    if (d.contains("window")) {
      std::vector<double> w;
      read(d, "window", w, "data");
      if (w.size() != 2) throw ConfigError("config: 'data.window' must be [lo, hi]");
      c.data.window_lo = w[0];
      c.data.window_hi = w[1];
    }
    if (d.contains("crop")) c.data.crop = read_index3(d["crop"], "data.crop");
    read(d, "z_overlap", c.data.z_overlap, "data");
    read(d, "inference_overlap", c.data.inference_overlap, "data");
    if (d.contains("augment")) {
      const json& a = d["augment"];
      check_keys(a, "data.augment", {"enabled", "max_rotation_deg", "scale_min", "scale_max"});
      read(a, "enabled", c.data.augment, "data.augment");
      read(a, "max_rotation_deg", c.data.augment_ranges.max_rotation_deg, "data.augment");
      read(a, "scale_min", c.data.augment_ranges.scale_min, "data.augment");
      read(a, "scale_max", c.data.augment_ranges.scale_max, "data.augment");
    }
  }
  if (doc.contains("schedule")) {
    const json& s = doc["schedule"];
    check_keys(s, "schedule", {"epochs", "eval_interval", "max_steps", "batch_size"});
    read(s, "epochs", c.schedule.epochs, "schedule");
    read(s, "eval_interval", c.schedule.eval_interval, "schedule");
    read(s, "batch_size", c.schedule.batch_size, "schedule");
    if (s.contains("max_steps") && !s["max_steps"].is_null()) {
      std::size_t m = 0;
      read(s, "max_steps", m, "schedule");
      c.schedule.max_steps = m;
    }
  }
  if (doc.contains("folds")) {
    const json& f = doc["folds"];
    check_keys(f, "folds", {"mode", "k", "seed", "only"});
    if (f.contains("mode")) {
      std::string mode;
      read(f, "mode", mode, "folds");
      if (mode == "cv") {
        c.folds.mode = FoldMode::cv;
      } else if (mode == "none") {
        c.folds.mode = FoldMode::none;
      } else {
        throw ConfigError("config: 'folds.mode' must be 'cv' or 'none', got '" + mode + "'");
      }
    }
    read(f, "k", c.folds.k, "folds");
    if (f.contains("seed") && !f["seed"].is_null()) {
      std::uint64_t s = 0;
      read(f, "seed", s, "folds");
      c.folds.seed = s;
    }
    if (f.contains("only") && !f["only"].is_null()) {
      std::size_t o = 0;
      read(f, "only", o, "folds");
      c.folds.only = o;
    }
  }
  c.validate(require_manifests);
  return c;
}

void set_seed(TrainConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.network.seed = seed;
}

TrainConfig load_train_config(const fs::path& path, bool require_manifests) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  TrainConfig c = parse_train_config(doc, path.parent_path(), require_manifests);
  c.check_paths();
  return c;
}

json to_json(const TrainConfig& c) {
  json tasks = json::array();
  for (const auto& t : c.network.tasks) tasks.push_back({{"name", t.name}, {"classes", t.class_names}});
  std::vector<std::string> manifests;
  for (const auto& m : c.data.manifests) manifests.push_back(m.generic_string());
  json doc = {
      {"network",
       {{"depth", c.network.depth},
        {"base_channels", c.network.base_channels},
        {"max_channels", c.network.max_channels},
        {"tasks", tasks}}},
      {"loss",
       {{"kind", to_string(c.loss.kind)},
        {"bootstrap_fraction", c.loss.bootstrap_fraction},
        {"dice_smoothing", c.loss.dice_smoothing}}},
      {"optimizer",
       {{"lr", c.optimizer.lr},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"data",
       {{"manifests", manifests},
        {"target_spacing", c.data.target_spacing},
        {"window", {c.data.window_lo, c.data.window_hi}},
        {"crop", {c.data.crop[0], c.data.crop[1], c.data.crop[2]}},
        {"z_overlap", c.data.z_overlap},
        {"inference_overlap", c.data.inference_overlap},
        {"augment",
         {{"enabled", c.data.augment},
          {"max_rotation_deg", c.data.augment_ranges.max_rotation_deg},
          {"scale_min", c.data.augment_ranges.scale_min},
          {"scale_max", c.data.augment_ranges.scale_max}}}}},
      {"schedule",
       {{"epochs", c.schedule.epochs},
        {"eval_interval", c.schedule.eval_interval},
        {"max_steps", c.schedule.max_steps ? json(*c.schedule.max_steps) : json(nullptr)},
        {"batch_size", c.schedule.batch_size}}},
      {"folds",
       {{"mode", c.folds.mode == FoldMode::cv ? "cv" : "none"},
        {"k", c.folds.k},
        {"seed", c.folds.seed ? json(*c.folds.seed) : json(nullptr)},
        {"only", c.folds.only ? json(*c.folds.only) : json(nullptr)}}},
      {"seed", c.seed},
      {"output_dir", c.output_dir.generic_string()},
  };
  if (!c.preset.empty()) doc["preset"] = c.preset;
  return doc;
}

}  // namespace tkvseg::cli
