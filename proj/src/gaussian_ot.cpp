#include "ddt/gaussian_ot.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddt/errors.hpp"

namespace ddt {

namespace {

void check_positive(std::span<const double> v, const char *what) {
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!(v[k] > 0.0))
      throw DomainError(std::string(what) + "[" + std::to_string(k) +
                        "] must be positive, got " + std::to_string(v[k]));
}

void check_dims(std::size_t a, std::size_t b, const char *what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": " + std::to_string(a) +
                         " vs " + std::to_string(b));
}

void check_embedding(const GaussianEmbedding &emb, std::span<const double> m) {
  check_dims(emb.mu.size(), m.size(), "embedding mean vs prototype mean");
  check_dims(emb.s.size(), m.size(), "embedding variance vs prototype mean");
  check_positive(emb.s, "s");
}

double squared_distance(const GaussianEmbedding &emb, std::span<const double> m) {
  double sq = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double dm = emb.mu[k] - m[k];
    const double ds = std::sqrt(emb.s[k]) - 1.0;
    sq += dm * dm + ds * ds;
  }
  return sq;
}

} // namespace

double w2_full(const FullGaussian &p, const FullGaussian &q) {
  check_dims(p.mu.size(), q.mu.size(), "mean dimensions");
  check_dims(p.mu.size(), p.cov_diag.size(), "P mean vs covariance");
  check_dims(q.mu.size(), q.cov_diag.size(), "Q mean vs covariance");
  check_positive(p.cov_diag, "P covariance");
  check_positive(q.cov_diag, "Q covariance");

  double sq = 0.0;
  for (std::size_t k = 0; k < p.mu.size(); ++k) {
    const double dm = p.mu[k] - q.mu[k];
    const double ds = std::sqrt(p.cov_diag[k]) - std::sqrt(q.cov_diag[k]);
    sq += dm * dm + ds * ds;
  }
  return std::sqrt(sq);
}

double w2_diag_identity(const GaussianEmbedding &emb, std::span<const double> m) {
  check_embedding(emb, m);
  return std::sqrt(squared_distance(emb, m));
}

W2Gradient w2_grad(const GaussianEmbedding &emb, std::span<const double> m,
                   double floor) {
  check_embedding(emb, m);
  if (!(floor > 0.0))
    throw DomainError("distance floor must be positive");

  const double w = std::max(std::sqrt(squared_distance(emb, m)), floor);
  W2Gradient g;
  g.mu.resize(m.size());
  g.s.resize(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double root = std::sqrt(emb.s[k]);
    g.mu[k] = (emb.mu[k] - m[k]) / w;
    g.s[k] = (root - 1.0) / (2.0 * root * w);
  }
  return g;
}

} // namespace ddt
