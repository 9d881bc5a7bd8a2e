#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "bison/model.hpp"
#include "bison/replay.hpp"

using namespace bison;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 4;
  c.hidden = {6};
  c.embed_dim = 3;
  c.num_classes = 5;
  return c;
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = n(rng);
  return t;
}

ModelState identity_network(std::size_t d) {
  ModelConfig c;
  c.input_dim = d;
  c.hidden = {};
  c.embed_dim = d;
  c.num_classes = 2;
  auto m = init_model(c, 0);
  m.extractor[0].weight = Tensor::zeros({d, d}, true);
  for (std::size_t i = 0; i < d; ++i) m.extractor[0].weight.at(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("init_model") {
  ModelConfig c;
  c.num_classes = 10;
  c.embed_dim = 32;
  auto a = init_model(c, 42);
  auto b = init_model(c, 42);
  CHECK(a.w_str.shape == Shape{10, 32});
  CHECK(a.w_buf.shape == a.w_str.shape);
  CHECK(a.alpha() == 0.5);
  CHECK(a.eta_str.item() == kInitialScale);
  CHECK(a.eta_buf.item() == kInitialScale);
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
  CHECK(init_model(c, 43).w_str.data != a.w_str.data);
  CHECK(a.extractor.back().weight.shape[0] == c.embed_dim);
}

TEST_CASE("D must equal the last layer width") {
  ModelConfig c = small_config();
  c.output_width = c.embed_dim + 1;
  CHECK_THROWS_AS(init_model(c, 0), std::invalid_argument);
  c.output_width = c.embed_dim;
  CHECK_NOTHROW(init_model(c, 0));
}

TEST_CASE("extractor_forward") {
  SUBCASE("zero network") {
    auto m = init_model(small_config(), 1);
    for (auto* p : m.extractor_parameters()) std::fill(p->data.begin(), p->data.end(), 0.0);
    std::mt19937_64 rng(1);
    Tensor z = extractor_forward(m, random_tensor(rng, {3, 4}));
    for (double v : z.data) CHECK(v == 0.0);
  }
  SUBCASE("identity network") {
    auto m = identity_network(3);
    Tensor x = Tensor::matrix(2, 3, {1, -2, 3, 0.5, 0, -1});
    CHECK(extractor_forward(m, x).data == x.data);
  }
  SUBCASE("rows in, rows out; width mismatch rejected") {
    auto m = init_model(small_config(), 2);
    std::mt19937_64 rng(2);
    CHECK(extractor_forward(m, random_tensor(rng, {7, 4})).shape == Shape{7, 3});
    CHECK_THROWS_AS(extractor_forward(m, random_tensor(rng, {7, 5})), std::invalid_argument);
  }
  SUBCASE("tape and plain versions agree") {
    auto m = init_model(small_config(), 3);
    std::mt19937_64 rng(3);
    Tensor x = random_tensor(rng, {5, 4});
    Tape tape;
    Var z = extractor_forward(tape, m, tape.constant(x));
    Tensor plain = extractor_forward(m, x);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(z.value().data[i] == doctest::Approx(plain.data[i]).epsilon(1e-14));
  }
  SUBCASE("batch order equivariance") {
    auto m = init_model(small_config(), 4);
    std::mt19937_64 rng(4);
    Tensor x = random_tensor(rng, {6, 4});
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor xp = Tensor::zeros({6, 4});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j) xp.at(i, j) = x.at(perm[i], j);
    Tensor z = extractor_forward(m, x), zp = extractor_forward(m, xp);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(zp.at(i, j) == z.at(perm[i], j));
  }
}

TEST_CASE("cosine_logits") {
  Tape tape;
  Tensor w = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Var wv = tape.constant(w);
  Var eta = tape.constant(Tensor::scalar(10.0));
  Var s = cosine_logits(tape.constant(Tensor::matrix(1, 2, {3, 0})), wv, eta);
  CHECK(s.value().at(0, 0) == doctest::Approx(10.0));
  CHECK(s.value().at(0, 1) == doctest::Approx(0.0));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = random_tensor(rng, {4, 3});
    Tensor z5 = z;
    for (auto& v : z5.data) v *= 5.0;
    Tensor wr = random_tensor(rng, {5, 3});
    Tensor wr_scaled = wr;
    for (std::size_t j = 0; j < 3; ++j) wr_scaled.at(2, j) *= 7.0;
    Var e = tape.constant(Tensor::scalar(-3.5));
    Var a = cosine_logits(tape.constant(z), tape.constant(wr), e);
    Var b = cosine_logits(tape.constant(z5), tape.constant(wr_scaled), e);
    for (std::size_t i = 0; i < a.value().size(); ++i) {
      CHECK(std::abs(a.value().data[i] - b.value().data[i]) <= 1e-12);
      CHECK(std::abs(a.value().data[i]) <= 3.5 + 1e-9);
    }
  }
}

TEST_CASE("ncm centroids") {
  SUBCASE("mean of embeddings") {
    Tensor z = Tensor::matrix(2, 2, {0, 0, 2, 2});
    std::vector<int> y{1, 1};
    auto c = centroids_from_embeddings(z, y);
    CHECK(c.mean.at(1) == std::vector<double>{1, 1});
    CHECK(c.mean.count(0) == 0);
  }
  SUBCASE("single sample per class") {
    Tensor z = Tensor::matrix(2, 2, {0.5, 1, -3, 2});
    std::vector<int> y{4, 2};
    auto c = centroids_from_embeddings(z, y);
    CHECK(c.mean.at(4) == std::vector<double>{0.5, 1});
    CHECK(c.mean.at(2) == std::vector<double>{-3, 2});
  }
  SUBCASE("from a buffer through the extractor") {
    auto m = identity_network(2);
    MemoryBuffer buf(10);
    Rng rng(0);
    buf.reservoir_update({{0, 0}, 3, 0, 0}, rng);
    buf.reservoir_update({{2, 2}, 3, 0, 1}, rng);
    auto c = ncm_centroids(buf, m);
    CHECK(c.mean.size() == 1);
    CHECK(c.mean.at(3) == std::vector<double>{1, 1});
    CHECK(c.count.at(3) == 2);
    CHECK_THROWS_AS(ncm_centroids(MemoryBuffer(3), m), std::invalid_argument);
  }
}

TEST_CASE("ncm predict") {
  Tensor mu = Tensor::matrix(2, 2, {0, 0, 4, 0});
  std::vector<int> y{0, 1};
  auto c = centroids_from_embeddings(mu, y);
  std::vector<double> e{1, 0};
  CHECK(ncm_predict(e, c) == 0);
  std::vector<double> exact{4, 0};
  CHECK(ncm_predict(exact, c) == 1);
  std::vector<double> tie{2, 0};
  CHECK(ncm_predict(tie, c) == 0);
}

TEST_CASE("ncm is translation invariant") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor z = random_tensor(rng, {12, 3});
    std::vector<int> y;
    for (int i = 0; i < 12; ++i) y.push_back(i % 3);
    Tensor shift = random_tensor(rng, {1, 3});
    Tensor zt = z;
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 3; ++j) zt.at(i, j) += 10.0 * shift.data[j];
    auto c = centroids_from_embeddings(z, y);
    auto ct = centroids_from_embeddings(zt, y);
    Tensor q = random_tensor(rng, {8, 3});
    for (std::size_t i = 0; i < 8; ++i) {
      std::vector<double> a(q.data.begin() + i * 3, q.data.begin() + i * 3 + 3), b = a;
      for (std::size_t j = 0; j < 3; ++j) b[j] += 10.0 * shift.data[j];
      CHECK(ncm_predict(a, c) == ncm_predict(b, ct));
    }
  }
}

TEST_CASE("checkpoint round trip") {
  auto m = init_model(small_config(), 9);
  m.alpha_raw.data[0] = 0.75;
  m.eta_buf.data[0] = 3.25;
  const auto path = std::filesystem::temp_directory_path() / "bison_ckpt_test.bin";
  save_checkpoint(m, path);
  auto r = load_checkpoint(path);
  auto pa = m.parameters(), pb = r.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->shape == pb[i]->shape);
    CHECK(pa[i]->data == pb[i]->data);
  }
  CHECK(r.config.hidden == m.config.hidden);
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
