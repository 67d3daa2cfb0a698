#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tkvseg {

// One line of a dataset manifest (JSON Lines). Paths are stored relative to the manifest
// directory when they live beneath it.
struct ManifestRecord {
  std::string case_id;
  std::filesystem::path image;
  std::filesystem::path mask;  // may be empty for unlabelled inference inputs
  std::string task;
  std::optional<std::size_t> fold;

  bool operator==(const ManifestRecord&) const = default;
};

// Resolves relative paths against the manifest's directory.
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestRecord>& records, const std::filesystem::path& path);

std::vector<ManifestRecord> records_for_task(const std::vector<ManifestRecord>& records,
                                             const std::string& task);

struct FoldPlan {
  std::size_t k = 3;
  std::map<std::string, std::size_t> assignment;  // case id -> fold

  std::size_t fold_of(const std::string& case_id) const;
  std::vector<std::vector<std::string>> folds() const;  // case ids per fold, in plan order
  std::vector<std::size_t> fold_sizes() const;

 private:
  friend FoldPlan plan_folds(const std::vector<std::string>&, std::size_t, std::uint64_t);
  std::vector<std::string> order_;  // shuffled order used for the round-robin deal
};

// Seeded shuffle, then round-robin dealing into k folds.
FoldPlan plan_folds(const std::vector<std::string>& case_ids, std::size_t k, std::uint64_t seed);

// Permutation of [0, n) determined by seed.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

// Index pairs for one epoch over two datasets: each set is shuffled independently and
// the smaller one cycles until the larger is exhausted.
std::vector<std::pair<std::size_t, std::size_t>> epoch_pairs(std::size_t size_a,
                                                             std::size_t size_b,
                                                             std::uint64_t seed,
                                                             std::size_t epoch);

// Generalization to any number of sets: one index sequence per set, all of length
// max(sizes), each set reshuffled per epoch and cycled when shorter.
std::vector<std::vector<std::size_t>> epoch_schedule(const std::vector<std::size_t>& sizes,
                                                     std::uint64_t seed, std::size_t epoch);

// Per-sample augmentation seed, independent of preparation order.
std::uint64_t sample_seed(std::uint64_t run_seed, const std::string& case_id, std::size_t epoch);

}  // namespace tkvseg
