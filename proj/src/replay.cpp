#include "bison/replay.hpp"

#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace bison {

MemoryBuffer::MemoryBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("buffer capacity must be positive");
  slots_.reserve(capacity);
}

bool MemoryBuffer::reservoir_update(const Sample& sample, Rng& rng) {
  ++seen_;
  if (slots_.size() < capacity_) {
    slots_.push_back(sample);
    return true;
  }
  std::uniform_int_distribution<std::uint64_t> dist(0, seen_ - 1);
  const auto j = dist(rng);
  if (j < capacity_) {
    slots_[j] = sample;
    return true;
  }
  return false;
}

std::vector<Sample> MemoryBuffer::random_retrieve(std::size_t k, Rng& rng) const {
  const std::size_t n = std::min(k, slots_.size());
  std::vector<std::size_t> idx(slots_.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> dist(i, idx.size() - 1);
    std::swap(idx[i], idx[dist(rng)]);
    out.push_back(slots_[idx[i]]);
  }
  return out;
}

void MemoryBuffer::remember_labels(std::span<const int> labels) {
  prev_labels_ = std::set<int>(labels.begin(), labels.end());
}

void MemoryBuffer::dump_jsonl(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    nlohmann::json rec{{"slot", i}, {"label", slots_[i].label}, {"features", slots_[i].features}};
    os << rec.dump() << '\n';
  }
}

}  // namespace bison
