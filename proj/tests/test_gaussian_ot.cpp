#include "doctest.h"

#include <cmath>
#include <random>

#include "ddt/errors.hpp"
#include "ddt/gaussian_ot.hpp"
#include "support/oracles.hpp"

using namespace ddt;

namespace {

FullGaussian random_gaussian(std::mt19937_64 &rng, int k) {
  std::normal_distribution<double> mean(0.0, 2.0);
  std::uniform_real_distribution<double> var(0.05, 5.0);
  FullGaussian g;
  for (int i = 0; i < k; ++i) {
    g.mu.push_back(mean(rng));
    g.cov_diag.push_back(var(rng));
  }
  return g;
}

GaussianEmbedding as_embedding(const FullGaussian &g) { return {g.mu, g.cov_diag}; }

} // namespace

TEST_CASE("w2_full: worked examples") {
  CHECK(w2_full({{0}, {4}}, {{1}, {1}}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(std::sqrt(oracle::w2_squared_1d(0, 2, 1, 1)) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  const FullGaussian p{{0.3, -1.2}, {0.7, 2.5}};
  CHECK(w2_full(p, p) == 0.0);
  CHECK(w2_full({{3, 0}, {1, 1}}, {{0, 0}, {1, 1}}) == 3.0);
}

TEST_CASE("w2_full: error paths") {
  CHECK_THROWS_AS(w2_full({{0, 0}, {1, 1}}, {{0}, {1}}), DimensionError);
  CHECK_THROWS_AS(w2_full({{0}, {0}}, {{0}, {1}}), DomainError);
  CHECK_THROWS_AS(w2_full({{0}, {1}}, {{0}, {-2}}), DomainError);
}

TEST_CASE("w2_diag_identity: worked examples") {
  const std::vector<double> zero{0, 0};
  CHECK(w2_diag_identity({{3, 0}, {4, 1}}, zero) ==
        doctest::Approx(std::sqrt(10.0)).epsilon(1e-15));
  CHECK(w2_diag_identity({{0.5, 2}, {1, 1}}, std::vector<double>{0.5, 2}) == 0.0);
  CHECK(w2_diag_identity({{0, 0}, {4, 4}}, zero) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(w2_diag_identity({{0}, {0}}, std::vector<double>{0}), DomainError);
  CHECK_THROWS_AS(w2_diag_identity({{0}, {1}}, zero), DimensionError);
}

TEST_CASE("w2: diagonal closed form equals the dense formula under random rotations") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 6;
    const auto p = random_gaussian(rng, k);
    const auto q = random_gaussian(rng, k);
    const Eigen::MatrixXd r = oracle::random_rotation(k, rng);
    const Eigen::VectorXd mp = r * Eigen::Map<const Eigen::VectorXd>(p.mu.data(), k);
    const Eigen::VectorXd mq = r * Eigen::Map<const Eigen::VectorXd>(q.mu.data(), k);
    const Eigen::MatrixXd cp =
        r * Eigen::Map<const Eigen::VectorXd>(p.cov_diag.data(), k).asDiagonal() * r.transpose();
    const Eigen::MatrixXd cq =
        r * Eigen::Map<const Eigen::VectorXd>(q.cov_diag.data(), k).asDiagonal() * r.transpose();
    const double expected = oracle::w2_dense(mp, cp, mq, cq);
    CHECK(w2_full(p, q) == doctest::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("w2: metric properties on random triples") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + trial % 16;
    const auto a = random_gaussian(rng, k);
    const auto b = random_gaussian(rng, k);
    const auto c = random_gaussian(rng, k);
    const double ab = w2_full(a, b);
    CHECK(ab == w2_full(b, a));
    CHECK(ab > 0.0);
    CHECK(w2_full(a, a) == 0.0);
    CHECK(ab <= w2_full(a, c) + w2_full(c, b) + 1e-9);
  }
}

TEST_CASE("w2: identity-component form agrees with the general form and the 1-D identity") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + trial % 32;
    const auto g = random_gaussian(rng, k);
    std::vector<double> m(k);
    for (auto &v : m)
      v = bit(rng);
    const double fast = w2_diag_identity(as_embedding(g), m);
    const double full = w2_full(g, {m, std::vector<double>(k, 1.0)});
    CHECK(std::abs(fast - full) <= 1e-9 * (1.0 + full));

    double sq = 0.0;
    for (int i = 0; i < k; ++i)
      sq += oracle::w2_squared_1d(g.mu[i], std::sqrt(g.cov_diag[i]), m[i], 1.0);
    CHECK(std::abs(fast * fast - sq) <= 1e-12 * (1.0 + sq));
  }
}

TEST_CASE("w2_grad: worked examples") {
  const auto g = w2_grad({{3, 0}, {1, 1}}, std::vector<double>{0, 0});
  CHECK(g.mu[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.mu[1] == 0.0);
  CHECK(g.s == std::vector<double>{0, 0});

  const auto at_min = w2_grad({{1, 0}, {1, 1}}, std::vector<double>{1, 0}, 1e-6);
  CHECK(at_min.mu == std::vector<double>{0, 0});
  CHECK(at_min.s == std::vector<double>{0, 0});

  const auto cov = w2_grad({{0}, {4}}, std::vector<double>{0});
  CHECK(cov.s[0] == doctest::Approx(0.25).epsilon(1e-15));

  CHECK_THROWS_AS(w2_grad({{0}, {1}}, std::vector<double>{0}, 0.0), DomainError);
}

TEST_CASE("w2_grad: floor bounds the gradient near the minimum") {
  const GaussianEmbedding e{{1e-9}, {1.0}};
  const auto g = w2_grad(e, std::vector<double>{0}, 1e-6);
  CHECK(g.mu[0] == doctest::Approx(1e-3));
}

TEST_CASE("w2_grad: matches central differences at random points") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> bit(0, 1);
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 8;
    auto g = random_gaussian(rng, k);
    std::vector<double> m(k);
    for (auto &v : m)
      v = bit(rng);
    const auto emb = as_embedding(g);
    const auto grad = w2_grad(emb, m);
    for (int i = 0; i < k; ++i) {
      auto f_mu = [&](double x) {
        auto e = emb;
        e.mu[i] = x;
        return w2_diag_identity(e, m);
      };
      auto f_s = [&](double x) {
        auto e = emb;
        e.s[i] = x;
        return w2_diag_identity(e, m);
      };
      const double n_mu = oracle::central_difference(f_mu, emb.mu[i], h);
      const double n_s = oracle::central_difference(f_s, emb.s[i], h);
      CHECK(std::abs(n_mu - grad.mu[i]) <= 1e-6 * std::max(1e-3, std::abs(n_mu)));
      CHECK(std::abs(n_s - grad.s[i]) <= 1e-6 * std::max(1e-3, std::abs(n_s)));
    }
  }
}
