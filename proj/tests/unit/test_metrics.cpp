#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "bison/diagnostics.hpp"
#include "bison/metrics.hpp"

using namespace bison;

namespace {

AccuracyMatrix worked_example() {
  AccuracyMatrix a(2);
  a.set(1, 1, 0.8);
  a.set(2, 1, 0.5);
  a.set(2, 2, 0.9);
  a.set_upper_bounds({0.9, 0.9});
  return a;
}

}  // namespace

TEST_CASE("worked example") {
  auto a = worked_example();
  CHECK(average_accuracy(a, 2) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(average_forgetting(a, 2) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(average_intransigence(a, 2) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(average_accuracy(a, 1) == 0.8);
}

TEST_CASE("average accuracy") {
  AccuracyMatrix a(3);
  for (std::size_t k = 1; k <= 3; ++k)
    for (std::size_t j = 1; j <= k; ++j) a.set(k, j, 1.0);
  CHECK(average_accuracy(a, 3) == 1.0);
  AccuracyMatrix missing(2);
  missing.set(1, 1, 0.5);
  missing.set(2, 2, 0.5);
  CHECK_THROWS(average_accuracy(missing, 2));
  CHECK(missing.completed_rows() == 1);
}

TEST_CASE("average forgetting") {
  AccuracyMatrix flat(3);
  for (std::size_t k = 1; k <= 3; ++k)
    for (std::size_t j = 1; j <= k; ++j) flat.set(k, j, 0.6);
  CHECK(average_forgetting(flat, 3) == 0.0);
  CHECK_THROWS(average_forgetting(flat, 1));

  AccuracyMatrix backward(2);
  backward.set(1, 1, 0.5);
  backward.set(2, 1, 0.7);
  backward.set(2, 2, 0.9);
  CHECK(average_forgetting(backward, 2) == doctest::Approx(-0.2));

  // Only rows i >= j enter the max: a_{1,2} does not exist.
  AccuracyMatrix three(3);
  three.set_row(1, std::vector<double>{0.9});
  three.set_row(2, std::vector<double>{0.4, 0.8});
  three.set_row(3, std::vector<double>{0.3, 0.5, 0.7});
  CHECK(average_forgetting(three, 3) == doctest::Approx(((0.9 - 0.3) + (0.8 - 0.5)) / 2.0));
}

TEST_CASE("average intransigence") {
  AccuracyMatrix a(2);
  a.set(1, 1, 0.7);
  a.set(2, 1, 0.6);
  a.set(2, 2, 0.8);
  CHECK_THROWS(average_intransigence(a, 2));
  a.set_upper_bounds({0.9, 0.8});
  CHECK(average_intransigence(a, 2) == doctest::Approx(0.1));
  a.set_upper_bounds({0.7, 0.8});
  CHECK(average_intransigence(a, 2) == 0.0);
  a.set_upper_bounds({0.5, 0.8});
  CHECK(average_intransigence(a, 2) < 0.0);
}

TEST_CASE("oracle equivalence and ranges") {
  const auto r = metrics_bench(11);
  CHECK(r.matrices == 1000);
  CHECK(r.max_abs_diff <= 1e-12);

  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 0; n < 200; ++n) {
    const std::size_t t = 1 + rng() % 10;
    AccuracyMatrix a(t);
    std::vector<double> best;
    for (std::size_t k = 1; k <= t; ++k) {
      best.push_back(u(rng));
      for (std::size_t j = 1; j <= k; ++j) a.set(k, j, u(rng));
    }
    a.set_upper_bounds(best);
    const double aa = average_accuracy(a, t), ai = average_intransigence(a, t);
    CHECK(aa >= 0.0);
    CHECK(aa <= 1.0);
    CHECK(ai >= -1.0);
    CHECK(ai <= 1.0);
    if (t >= 2) {
      const double af = average_forgetting(a, t);
      CHECK(af >= -1.0);
      CHECK(af <= 1.0);
    }
  }
}

TEST_CASE("row normalisation") {
  ConfusionMatrix m(3);
  m.add(0, 0, 2);
  m.add(0, 1, 2);
  auto r = row_normalize(m);
  CHECK(r[0][0] == doctest::Approx(0.5));
  CHECK(r[0][1] == doctest::Approx(0.5));
  CHECK(r[1] == std::vector<double>{0, 0, 0});
  for (const auto& row : r) {
    double s = 0;
    for (double v : row) s += v;
    CHECK(s <= 1.0);
  }
}

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix m(3);
  m.add(0, 0, 5);
  m.add(0, 2);
  m.add(1, 2, 3);
  CHECK(m.total() == 9);
  CHECK(m.row_total(0) == 6);
  CHECK(m.column_total(2) == 4);
  CHECK(*m.precision(2) == doctest::Approx(0.0));
  CHECK(*m.precision(0) == 1.0);
  CHECK(!m.precision(1));
  CHECK_THROWS(m.add(3, 0));
}

TEST_CASE("similar pairs") {
  const std::pair<int, int> p[] = {{0, 1}};
  SimilarPairs pairs(4, p);
  CHECK(pairs.neighbors(1) == std::set<int>{0});
  CHECK(!pairs.has_neighbors(2));
  const std::pair<int, int> self[] = {{2, 2}};
  CHECK_THROWS(SimilarPairs(4, self));
}

TEST_CASE("hand-built 4-class confusion") {
  // Classes 0 and 1 form the similar pair.
  ConfusionMatrix m(4);
  const std::uint64_t counts[4][4] = {{6, 3, 1, 0}, {2, 2, 0, 4}, {0, 0, 5, 5}, {0, 0, 0, 0}};
  for (int c = 0; c < 4; ++c)
    for (int d = 0; d < 4; ++d)
      if (counts[c][d]) m.add(c, d, counts[c][d]);
  const std::pair<int, int> p[] = {{0, 1}};
  SimilarPairs pairs(4, p);
  auto r = row_normalize(m);

  const double eps = kRowEpsilon;
  const double r00 = 6 / (10 + eps), r01 = 3 / (10 + eps);
  const double r10 = 2 / (8 + eps);
  CHECK(std::abs(sc_at_1(r, pairs, 0) - r01) <= 1e-12);
  CHECK(std::abs(sc_at_1(r, pairs, 1) - r10) <= 1e-12);
  CHECK(std::abs(*p_sim(r, pairs, 0) - r00 / (r00 + r01)) <= 1e-12);
  CHECK(std::abs(*p_sim(r, pairs, 0) - 2.0 / 3.0) <= 1e-12);
  CHECK(std::abs(*p_sim(r, pairs, 1) - 0.5) <= 1e-12);
  CHECK(sc_at_1(r, pairs, 2) == 0.0);
  CHECK(!p_sim(r, pairs, 3));
  for (int c = 0; c < 4; ++c) CHECK(sc_at_1(r, pairs, c) + r[c][c] <= 1.0);
}

TEST_CASE("sc@1 and p_sim limits") {
  const std::pair<int, int> p[] = {{0, 1}};
  SimilarPairs pairs(2, p);
  ConfusionMatrix correct(2);
  correct.add(0, 0, 10);
  auto r = row_normalize(correct);
  CHECK(sc_at_1(r, pairs, 0) == 0.0);
  CHECK(*p_sim(r, pairs, 0) == 1.0);

  ConfusionMatrix confused(2);
  confused.add(0, 1, 10);
  auto rc = row_normalize(confused);
  CHECK(sc_at_1(rc, pairs, 0) == doctest::Approx(1.0));
  CHECK(*p_sim(rc, pairs, 0) == 0.0);
}
