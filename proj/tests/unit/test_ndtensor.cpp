#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "bison/tensor.hpp"

using namespace bison;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t({2, 3}, std::vector<double>(6, 1.0));
  CHECK(shape_size(t.shape) == t.data.size());
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5, 1.0)), std::invalid_argument);
}

TEST_CASE("forward examples") {
  Tape tape;
  Var i2 = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var m = tape.constant(Tensor::matrix(2, 2, {3, 4, 5, 6}));
  CHECK(matmul(i2, m).value().data == std::vector<double>{3, 4, 5, 6});

  Var r = relu(tape.constant(Tensor::vector({-1, 0, 2})));
  CHECK(r.value().data == std::vector<double>{0, 0, 2});

  Var a = tape.constant(Tensor::matrix(1, 2, {1, 0}));
  Var b = tape.constant(Tensor::matrix(1, 2, {0, 1}));
  CHECK(cosine_similarity(a, b).value().data[0] == doctest::Approx(0.0));
}

TEST_CASE("shape mismatch reports both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor::zeros({2, 3}));
  Var b = tape.constant(Tensor::zeros({2, 2}));
  try {
    matmul(a, b);
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shape_str({2, 3})) != std::string::npos);
    CHECK(msg.find(shape_str({2, 2})) != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}

TEST_CASE("backward examples") {
  SUBCASE("sum") {
    Tensor x = Tensor::vector({1, 2, 3});
    x.requires_grad = true;
    Tape tape;
    tape.backward(sum(tape.leaf(x)));
    CHECK(*x.grad == std::vector<double>{1, 1, 1});
  }
  SUBCASE("sigmoid at zero") {
    Tensor x = Tensor::scalar(0.0, true);
    Tape tape;
    tape.backward(sigmoid(tape.leaf(x)));
    CHECK((*x.grad)[0] == doctest::Approx(0.25));
  }
  SUBCASE("stop gradient") {
    Tensor x = Tensor::scalar(3.0, true), y = Tensor::scalar(5.0, true);
    Tape tape;
    tape.backward(stop_gradient(tape.leaf(x)) * tape.leaf(y));
    CHECK((*x.grad)[0] == 0.0);
    CHECK((*y.grad)[0] == 3.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = Tensor::vector({1, 2});
    x.requires_grad = true;
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.leaf(x)), std::invalid_argument);
  }
}

TEST_CASE("sgd examples") {
  SgdConfig cfg{0.1};
  Tensor p = Tensor::scalar(1.0, true);
  p.grad = std::vector<double>{2.0};
  Tensor* ps[] = {&p};
  sgd_step(ps, cfg);
  CHECK(p.data[0] == doctest::Approx(0.8));
  CHECK(!p.grad);

  p.grad = std::vector<double>{0.0};
  sgd_step(ps, cfg);
  CHECK(p.data[0] == doctest::Approx(0.8));

  Tensor q = Tensor::vector({1, 1});
  q.requires_grad = true;
  q.grad = std::vector<double>{1, -1};
  Tensor* qs[] = {&q};
  sgd_step(qs, cfg);
  CHECK(q.data[0] == doctest::Approx(0.9));
  CHECK(q.data[1] == doctest::Approx(1.1));

  Tensor missing = Tensor::scalar(1.0, true);
  Tensor* ms[] = {&missing};
  CHECK_THROWS_WITH(sgd_step(ms, cfg), doctest::Contains("no gradient"));
  CHECK_THROWS(SgdConfig{0.0}.validate());
}

TEST_CASE("finite difference examples") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor(rng, {5});
  CHECK(finite_diff_check([](Tape&, Var v) { return sum(v * v); }, x) <= 1e-6);
  CHECK(finite_diff_check([](Tape& t, Var) { return t.constant(Tensor::scalar(4.0)); }, x) == 0.0);
}

TEST_CASE("every op matches central differences") {
  std::mt19937_64 rng(7);
  const double tol = 1e-4;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_tensor(rng, {3, 4});
    Tensor b = random_tensor(rng, {3, 4});
    Tensor c = random_tensor(rng, {4, 2});
    Tensor row = random_tensor(rng, {4});
    Tensor pos = random_tensor(rng, {3, 4}, 0.5, 2.0);
    Tensor mask = Tensor::zeros({3, 4});
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = (i % 3) ? 1.0 : 0.0;
    const std::vector<bool> cols{true, false, true, true};
    const std::vector<std::size_t> idx{0, 2, 3};
    const std::vector<std::size_t> rows{2, 0};

    auto wsum = [](Var v) {
      // Weighted sum so that permutation errors show up in the gradient.
      Tensor w = Tensor::zeros(v.shape());
      for (std::size_t i = 0; i < w.size(); ++i) w.data[i] = 0.3 + 0.1 * static_cast<double>(i);
      return sum(v * v.tape().constant(w));
    };

    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(v + t.constant(b)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(v - t.constant(b)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(v * t.constant(b)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(t.constant(a) + v); }, row) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(t.constant(a) * v); }, row) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(shift(scale(neg(v), 1.5), 0.2)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(matmul(v, t.constant(c))); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(matmul(t.constant(a), v)); }, c) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(transpose(v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(relu(v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(sigmoid(v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(exp(v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(log(v)); }, pos) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(sum(v, 0)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(sum(v, 1)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return mean(v * v); }, a) <= tol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var v) {
                Var parts[] = {v, t.constant(b), v};
                return wsum(concat(parts, 0));
              },
              a) <= tol);
    CHECK(finite_diff_check(
              [&](Tape& t, Var v) {
                Var parts[] = {t.constant(b), v};
                return wsum(concat(parts, 1));
              },
              a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(row_norm(v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(normalize_rows(v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(cosine_similarity(v, t.constant(b))); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(cosine_similarity(t.constant(b), v)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape& t, Var v) { return wsum(cosine_matrix(v, t.constant(transpose(t.constant(c)).value()))); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(softmax(v)); }, a) <= tol);
    CHECK(finite_diff_check(
              [&](Tape&, Var v) {
                // Masked columns are -inf, so only the live ones are summed.
                Var ls = log_softmax(v, cols);
                return sum(pick(ls, idx));
              },
              a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return sum(pick(v, idx)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(select_rows(v, rows)); }, a) <= tol);
    CHECK(finite_diff_check([&](Tape&, Var v) { return wsum(log_one_plus_sum_exp(v, mask)); }, a) <= tol);
  }
}

TEST_CASE("softmax rows sum to one and log-softmax stays finite") {
  std::mt19937_64 rng(3);
  Tape tape;
  Tensor big = random_tensor(rng, {4, 6}, -1e3, 1e3);
  Var s = softmax(tape.constant(big));
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 6; ++j) total += s.value().at(i, j);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
  Var ls = log_softmax(tape.constant(big));
  for (double v : ls.value().data) CHECK(std::isfinite(v));
}

TEST_CASE("masked log-softmax excludes columns") {
  Tape tape;
  Var ls = log_softmax(tape.constant(Tensor::matrix(1, 3, {0, 0, 100})), {true, true, false});
  CHECK(ls.value().data[0] == doctest::Approx(std::log(0.5)));
  CHECK(std::isinf(ls.value().data[2]));
}

TEST_CASE("stop_gradient zeroes everything upstream bitwise") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor(rng, {3, 3});
    x.requires_grad = true;
    Tensor y = random_tensor(rng, {3, 3});
    y.requires_grad = true;
    Tape tape;
    Var xv = tape.leaf(x);
    Var upstream = sigmoid(matmul(xv, xv));
    Var loss = sum(stop_gradient(upstream) * tape.leaf(y)) + scale(sum(stop_gradient(exp(xv))), 2.0);
    tape.backward(loss);
    for (double g : *x.grad) CHECK(g == 0.0);
    CHECK(std::any_of(y.grad->begin(), y.grad->end(), [](double g) { return g != 0.0; }));
  }
}

TEST_CASE("cosine similarity is scale invariant") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> s(0.01, 100.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor u = random_tensor(rng, {1, 5}), v = random_tensor(rng, {1, 5});
    Tensor su = u, sv = v;
    const double a = s(rng), b = s(rng);
    for (auto& e : su.data) e *= a;
    for (auto& e : sv.data) e *= b;
    Tape tape;
    const double c1 = cosine_similarity(tape.constant(u), tape.constant(v)).value().data[0];
    const double c2 = cosine_similarity(tape.constant(su), tape.constant(sv)).value().data[0];
    CHECK(std::abs(c1 - c2) <= 1e-12);
  }
}

TEST_CASE("cosine clamps degenerate norms") {
  Tape tape;
  Var z = tape.constant(Tensor::matrix(1, 2, {0, 0}));
  Var w = tape.constant(Tensor::matrix(1, 2, {1, 0}));
  CHECK(cosine_similarity(z, w).value().data[0] == 0.0);
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor(rng, {4, 4});
  a.requires_grad = true;
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    Tape tape;
    Var v = tape.leaf(a);
    tape.backward(sum(log_softmax(matmul(v, transpose(v)))) + sum(cosine_matrix(v, v)));
    if (run == 0) first = *a.grad;
    else CHECK(*a.grad == first);
    a.grad.reset();
  }
}

TEST_CASE("gradients accumulate across bound leaves") {
  Tensor x = Tensor::scalar(2.0, true);
  Tape tape;
  Var a = tape.leaf(x), b = tape.leaf(x);
  tape.backward(a * b);
  CHECK((*x.grad)[0] == doctest::Approx(4.0));
  CHECK(tape.parameters().size() == 1);
}
