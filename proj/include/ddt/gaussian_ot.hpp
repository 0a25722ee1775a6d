#pragma once

#include <span>
#include <vector>

namespace ddt {

/// Per-sample latent distribution N(mu, diag(s)).
struct GaussianEmbedding {
  std::vector<double> mu;
  std::vector<double> s; // variances, all > 0
};

/// Gaussian with diagonal covariance. Dense covariances are not supported.
struct FullGaussian {
  std::vector<double> mu;
  std::vector<double> cov_diag;
};

/// Distance floor used by the training loss to bound 1/W near the minimum.
inline constexpr double kDistanceFloor = 1e-6;

/**
 * Closed-form 2-Wasserstein distance between two diagonal Gaussians:
 *   sqrt(||mu_p - mu_q||^2 + sum_k (sqrt(a_k) - sqrt(b_k))^2)
 * which is the general Gaussian formula with commuting, elementwise square
 * roots. Throws DimensionError / DomainError.
 */
double w2_full(const FullGaussian &p, const FullGaussian &q);

/// W2 between N(mu, diag(s)) and N(m, I).
double w2_diag_identity(const GaussianEmbedding &emb, std::span<const double> m);

struct W2Gradient {
  std::vector<double> mu;
  std::vector<double> s;
};

/// d/dmu and d/ds of w2_diag_identity, with the distance clamped below by
/// `floor` in the denominator.
W2Gradient w2_grad(const GaussianEmbedding &emb, std::span<const double> m,
                   double floor = kDistanceFloor);

} // namespace ddt
