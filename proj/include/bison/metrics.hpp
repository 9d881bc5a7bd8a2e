#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

namespace bison {

// Lower-triangular grid of task accuracies. Tasks are numbered from 1 in
// the accessors below: at(k, j) is the accuracy on task j after training task k.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t num_tasks);

  std::size_t num_tasks() const { return rows_.size(); }
  // Number of leading rows that are complete.
  std::size_t completed_rows() const;

  void set(std::size_t k, std::size_t j, double accuracy);
  void set_row(std::size_t k, std::span<const double> accuracies);
  std::optional<double> at(std::size_t k, std::size_t j) const;
  double get(std::size_t k, std::size_t j) const;

  void set_upper_bounds(std::vector<double> bounds);
  const std::vector<double>& upper_bounds() const { return upper_; }

  const std::vector<std::vector<std::optional<double>>>& rows() const { return rows_; }

 private:
  std::vector<std::vector<std::optional<double>>> rows_;
  std::vector<double> upper_;
};

double average_accuracy(const AccuracyMatrix& a, std::size_t k);
double average_forgetting(const AccuracyMatrix& a, std::size_t k);
double average_intransigence(const AccuracyMatrix& a, std::size_t k);

// ---------------------------------------------------------------------------

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return n_; }
  void add(int truth, int predicted, std::uint64_t count = 1);
  std::uint64_t count(int truth, int predicted) const;
  std::uint64_t total() const;
  std::uint64_t row_total(int truth) const;
  std::uint64_t column_total(int predicted) const;
  // Raw-count precision M[c,c] / sum_i M[i,c]; nullopt when nothing was predicted as c.
  std::optional<double> precision(int c) const;

  const std::vector<std::uint64_t>& counts() const { return counts_; }

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
};

inline constexpr double kRowEpsilon = 1e-12;

using Matrix = std::vector<std::vector<double>>;

// M_row[c][d] = M[c][d] / (sum_j M[c][j] + eps)
Matrix row_normalize(const ConfusionMatrix& m, double eps = kRowEpsilon);

class SimilarPairs {
 public:
  SimilarPairs() = default;
  SimilarPairs(std::size_t num_classes, std::span<const std::pair<int, int>> pairs);

  const std::set<int>& neighbors(int c) const;
  bool has_neighbors(int c) const { return !neighbors(c).empty(); }
  std::size_t num_classes() const { return neighbors_.size(); }
  std::vector<std::pair<int, int>> pairs() const;

 private:
  std::vector<std::set<int>> neighbors_;
};

// sum_{d in N(c)} M_row[c][d]
double sc_at_1(const Matrix& m_row, const SimilarPairs& pairs, int c);
// M_row[c][c] / (M_row[c][c] + SC@1(c)); nullopt when the denominator is zero.
std::optional<double> p_sim(const Matrix& m_row, const SimilarPairs& pairs, int c);

}  // namespace bison
