#include "tkvseg/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "tkvseg/errors.hpp"
#include "tkvseg/random.hpp"

namespace tkvseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::string relativize(const fs::path& base, const fs::path& p) {
  if (p.empty()) return {};
  const fs::path abs_base = fs::absolute(base).lexically_normal();
  const fs::path abs_p = fs::absolute(p).lexically_normal();
  const fs::path rel = abs_p.lexically_relative(abs_base);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return abs_p.generic_string();
}

}  // namespace

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestRecord> records;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("manifest record is not valid JSON: ") + e.what(), line_no);
    }
    try {
      ManifestRecord r;
      r.case_id = j.at("case_id").get<std::string>();
      r.image = resolve(base, j.at("image").get<std::string>());
      r.mask = resolve(base, j.value("mask", std::string{}));
      r.task = j.at("task").get<std::string>();
      if (j.contains("fold") && !j["fold"].is_null()) r.fold = j["fold"].get<std::size_t>();
      if (r.case_id.empty() || r.task.empty()) {
        throw ParseError("case_id and task must be non-empty", line_no);
      }
      if (!seen.emplace(r.task, r.case_id).second) {
        throw ParseError("duplicate case '" + r.case_id + "' for task '" + r.task + "'", line_no);
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(std::string("manifest record: ") + e.what(), line_no);
    }
  }
  return records;
}

void write_manifest(const std::vector<ManifestRecord>& records, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  for (const auto& r : records) {
    json j;
    j["case_id"] = r.case_id;
    j["image"] = relativize(base, r.image);
    if (!r.mask.empty()) j["mask"] = relativize(base, r.mask);
    j["task"] = r.task;
    if (r.fold) j["fold"] = *r.fold;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::vector<ManifestRecord> records_for_task(const std::vector<ManifestRecord>& records,
                                             const std::string& task) {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [&task](const ManifestRecord& r) { return r.task == task; });
  return out;
}

std::size_t FoldPlan::fold_of(const std::string& case_id) const {
  auto it = assignment.find(case_id);
  if (it == assignment.end()) throw ConfigError("case '" + case_id + "' is not in the fold plan");
  return it->second;
}

std::vector<std::vector<std::string>> FoldPlan::folds() const {
  std::vector<std::vector<std::string>> out(k);
  for (const auto& id : order_) out[assignment.at(id)].push_back(id);
  return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (const auto& [id, fold] : assignment) ++sizes[fold];
  return sizes;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

FoldPlan plan_folds(const std::vector<std::string>& case_ids, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be >= 2");
  if (case_ids.size() < k) {
    throw ConfigError("need at least " + std::to_string(k) + " cases for " + std::to_string(k) +
                      "-fold cross validation, got " + std::to_string(case_ids.size()));
  }
  std::set<std::string> unique(case_ids.begin(), case_ids.end());
  if (unique.size() != case_ids.size()) throw ConfigError("duplicate case ids in fold planning");
  FoldPlan plan;
  plan.k = k;
  const auto order = shuffled_indices(case_ids.size(), mix_seed(seed, 0xf01d));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::string& id = case_ids[order[i]];
    plan.assignment.emplace(id, i % k);
    plan.order_.push_back(id);
  }
  return plan;
}

std::vector<std::vector<std::size_t>> epoch_schedule(const std::vector<std::size_t>& sizes,
                                                     std::uint64_t seed, std::size_t epoch) {
  if (sizes.empty()) throw ConfigError("epoch_schedule: no datasets");
  std::size_t n = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("epoch_schedule: every dataset must be non-empty");
    n = std::max(n, s);
  }
  const std::uint64_t epoch_seed = mix_seed(seed, epoch);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t t = 0; t < sizes.size(); ++t) {
    const auto order = shuffled_indices(sizes[t], mix_seed(epoch_seed, t));
    std::vector<std::size_t> seq(n);
    for (std::size_t i = 0; i < n; ++i) seq[i] = order[i % sizes[t]];
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> epoch_pairs(std::size_t size_a,
                                                             std::size_t size_b,
                                                             std::uint64_t seed,
                                                             std::size_t epoch) {
  if (size_a == 0 || size_b == 0) throw ConfigError("epoch_pairs: both datasets must be non-empty");
  const auto seqs = epoch_schedule({size_a, size_b}, seed, epoch);
  std::vector<std::pair<std::size_t, std::size_t>> pairs(seqs[0].size());
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs[i] = {seqs[0][i], seqs[1][i]};
  return pairs;
}

std::uint64_t sample_seed(std::uint64_t run_seed, const std::string& case_id, std::size_t epoch) {
  return mix_seed(mix_seed(run_seed, fnv1a(case_id)), epoch);
}

}  // namespace tkvseg
