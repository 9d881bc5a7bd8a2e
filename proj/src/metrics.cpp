#include "bison/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace bison {

AccuracyMatrix::AccuracyMatrix(std::size_t num_tasks) : rows_(num_tasks) {
  for (std::size_t k = 0; k < num_tasks; ++k) rows_[k].resize(k + 1);
}

std::size_t AccuracyMatrix::completed_rows() const {
  std::size_t n = 0;
  for (const auto& row : rows_) {
    if (!std::all_of(row.begin(), row.end(), [](const auto& v) { return v.has_value(); })) break;
    ++n;
  }
  return n;
}

void AccuracyMatrix::set(std::size_t k, std::size_t j, double accuracy) {
  if (k < 1 || k > rows_.size() || j < 1 || j > k) {
    throw std::out_of_range("accuracy entry (" + std::to_string(k) + ", " + std::to_string(j) +
                            ") outside the lower triangle of " + std::to_string(rows_.size()) +
                            " tasks");
  }
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) {
    throw std::invalid_argument("accuracy " + std::to_string(accuracy) + " outside [0, 1]");
  }
  rows_[k - 1][j - 1] = accuracy;
}

void AccuracyMatrix::set_row(std::size_t k, std::span<const double> accuracies) {
  if (accuracies.size() != k) throw std::invalid_argument("row " + std::to_string(k) + " needs " +
                                                          std::to_string(k) + " entries");
  for (std::size_t j = 1; j <= k; ++j) set(k, j, accuracies[j - 1]);
}

std::optional<double> AccuracyMatrix::at(std::size_t k, std::size_t j) const {
  if (k < 1 || k > rows_.size() || j < 1 || j > k) return std::nullopt;
  return rows_[k - 1][j - 1];
}

double AccuracyMatrix::get(std::size_t k, std::size_t j) const {
  auto v = at(k, j);
  if (!v) {
    throw std::invalid_argument("accuracy entry (" + std::to_string(k) + ", " + std::to_string(j) +
                                ") is missing");
  }
  return *v;
}

void AccuracyMatrix::set_upper_bounds(std::vector<double> bounds) {
  for (double b : bounds)
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("upper bound outside [0, 1]");
  upper_ = std::move(bounds);
}

double average_accuracy(const AccuracyMatrix& a, std::size_t k) {
  if (k < 1) throw std::invalid_argument("average_accuracy needs k >= 1");
  double s = 0.0;
  for (std::size_t j = 1; j <= k; ++j) s += a.get(k, j);
  return s / static_cast<double>(k);
}

double average_forgetting(const AccuracyMatrix& a, std::size_t k) {
  if (k < 2) throw std::invalid_argument("average_forgetting needs k >= 2, got " + std::to_string(k));
  double s = 0.0;
  for (std::size_t j = 1; j < k; ++j) {
    const double last = a.get(k, j);
    // Only rows i >= j define a_{i,j}.
    double worst = a.get(j, j) - last;
    for (std::size_t i = j + 1; i < k; ++i) worst = std::max(worst, a.get(i, j) - last);
    s += worst;
  }
  return s / static_cast<double>(k - 1);
}

double average_intransigence(const AccuracyMatrix& a, std::size_t k) {
  if (k < 1) throw std::invalid_argument("average_intransigence needs k >= 1");
  if (a.upper_bounds().size() < k) {
    throw std::invalid_argument("average_intransigence: upper bounds cover " +
                                std::to_string(a.upper_bounds().size()) + " of " + std::to_string(k) +
                                " tasks");
  }
  double s = 0.0;
  for (std::size_t j = 1; j <= k; ++j) s += a.upper_bounds()[j - 1] - a.get(j, j);
  return s / static_cast<double>(k);
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : n_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= n_ ||
      static_cast<std::size_t>(predicted) >= n_) {
    throw std::out_of_range("confusion entry (" + std::to_string(truth) + ", " +
                            std::to_string(predicted) + ") outside " + std::to_string(n_) + " classes");
  }
  counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)] += count;
}

std::uint64_t ConfusionMatrix::count(int truth, int predicted) const {
  return counts_.at(static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted));
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

std::uint64_t ConfusionMatrix::row_total(int truth) const {
  std::uint64_t s = 0;
  for (std::size_t d = 0; d < n_; ++d) s += count(truth, static_cast<int>(d));
  return s;
}

std::uint64_t ConfusionMatrix::column_total(int predicted) const {
  std::uint64_t s = 0;
  for (std::size_t c = 0; c < n_; ++c) s += count(static_cast<int>(c), predicted);
  return s;
}

std::optional<double> ConfusionMatrix::precision(int c) const {
  const auto col = column_total(c);
  if (col == 0) return std::nullopt;
  return static_cast<double>(count(c, c)) / static_cast<double>(col);
}

Matrix row_normalize(const ConfusionMatrix& m, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("row_normalize: eps must be positive");
  const auto n = m.num_classes();
  Matrix out(n, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < n; ++c) {
    const double denom = static_cast<double>(m.row_total(static_cast<int>(c))) + eps;
    for (std::size_t d = 0; d < n; ++d) {
      out[c][d] = static_cast<double>(m.count(static_cast<int>(c), static_cast<int>(d))) / denom;
    }
  }
  return out;
}

SimilarPairs::SimilarPairs(std::size_t num_classes, std::span<const std::pair<int, int>> pairs)
    : neighbors_(num_classes) {
  for (auto [a, b] : pairs) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= num_classes ||
        static_cast<std::size_t>(b) >= num_classes) {
      throw std::invalid_argument("similar pair (" + std::to_string(a) + ", " + std::to_string(b) +
                                  ") outside " + std::to_string(num_classes) + " classes");
    }
    if (a == b) throw std::invalid_argument("a class cannot be its own similar neighbour");
    neighbors_[static_cast<std::size_t>(a)].insert(b);
    neighbors_[static_cast<std::size_t>(b)].insert(a);
  }
}

const std::set<int>& SimilarPairs::neighbors(int c) const {
  return neighbors_.at(static_cast<std::size_t>(c));
}

std::vector<std::pair<int, int>> SimilarPairs::pairs() const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t c = 0; c < neighbors_.size(); ++c)
    for (int d : neighbors_[c])
      if (static_cast<int>(c) < d) out.emplace_back(static_cast<int>(c), d);
  return out;
}

double sc_at_1(const Matrix& m_row, const SimilarPairs& pairs, int c) {
  double s = 0.0;
  for (int d : pairs.neighbors(c)) s += m_row.at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(d));
  return s;
}

std::optional<double> p_sim(const Matrix& m_row, const SimilarPairs& pairs, int c) {
  const double self = m_row.at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(c));
  const double denom = self + sc_at_1(m_row, pairs, c);
  if (denom <= 0.0) return std::nullopt;
  return self / denom;
}

}  // namespace bison
