#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <span>
#include <vector>

namespace bison {

struct Sample {
  std::vector<double> features;
  int label = 0;
  int task = -1;
  // Position in the originating training split; used for single-pass accounting.
  std::size_t id = 0;
};

using Rng = std::mt19937_64;

// Bounded sample store with reservoir updating.
class MemoryBuffer {
 public:
  explicit MemoryBuffer(std::size_t capacity);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::uint64_t seen_count() const { return seen_; }
  const std::vector<Sample>& slots() const { return slots_; }

  // Returns true when the sample was stored.
  bool reservoir_update(const Sample& sample, Rng& rng);
  // min(k, size()) slots drawn uniformly without replacement.
  std::vector<Sample> random_retrieve(std::size_t k, Rng& rng) const;

  void remember_labels(std::span<const int> labels);
  const std::set<int>& prev_labels() const { return prev_labels_; }

  // One JSON object per line: {"slot": i, "label": y, "features": [...]}.
  void dump_jsonl(const std::filesystem::path& path) const;

 private:
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  std::vector<Sample> slots_;
  std::set<int> prev_labels_;
};

}  // namespace bison
