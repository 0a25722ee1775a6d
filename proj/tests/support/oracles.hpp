#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace ddt::oracle {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd &m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

/// General Gaussian W2 with dense covariances via eigen-decomposed square roots.
inline double w2_dense(const Eigen::VectorXd &mu_p, const Eigen::MatrixXd &cov_p,
                       const Eigen::VectorXd &mu_q, const Eigen::MatrixXd &cov_q) {
  const Eigen::MatrixXd root_p = psd_sqrt(cov_p);
  const Eigen::MatrixXd cross = psd_sqrt(root_p * cov_q * root_p);
  const double trace = (cov_p + cov_q - 2.0 * cross).trace();
  return std::sqrt(std::max(0.0, (mu_p - mu_q).squaredNorm() + trace));
}

/// Random orthogonal matrix (QR of a Gaussian matrix).
inline Eigen::MatrixXd random_rotation(int n, std::mt19937_64 &rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      a(i, j) = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  return qr.householderQ();
}

/// 1-D quantile coupling: W2^2 = (mu1 - mu2)^2 + (sigma1 - sigma2)^2.
inline double w2_squared_1d(double mu1, double sigma1, double mu2, double sigma2) {
  return (mu1 - mu2) * (mu1 - mu2) + (sigma1 - sigma2) * (sigma1 - sigma2);
}

inline double central_difference(const std::function<double(double)> &f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Textbook Adam on a scalar for `grads.size()` steps; returns the trajectory.
inline std::vector<double> adam_trajectory(double w, const std::vector<double> &grads, double lr,
                                           double b1 = 0.9, double b2 = 0.999,
                                           double eps = 1e-8) {
  std::vector<double> out;
  double m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    w -= lr * mh / (std::sqrt(vh) + eps);
    out.push_back(w);
  }
  return out;
}

/// Depth-2 axis-aligned decision tree over dense feature rows, fit by
/// exhaustive threshold search (midpoints between sorted values).
class DecisionStump2 {
public:
  void fit(const std::vector<std::vector<double>> &x, const std::vector<int> &y) {
    root_ = best_split(x, y, all(x.size()));
    std::vector<std::size_t> left, right;
    partition(x, all(x.size()), root_, left, right);
    children_[0] = best_split(x, y, left);
    children_[1] = best_split(x, y, right);
  }

  int predict(const std::vector<double> &row) const {
    const Node &child = children_[row[root_.feature] > root_.threshold ? 1 : 0];
    return row[child.feature] > child.threshold ? child.above : child.below;
  }

  double accuracy(const std::vector<std::vector<double>> &x, const std::vector<int> &y) const {
    int correct = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      correct += predict(x[i]) == y[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(x.size());
  }

private:
  struct Node {
    std::size_t feature = 0;
    double threshold = 0.0;
    int below = 0;
    int above = 1;
  };

  static std::vector<std::size_t> all(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i)
      idx[i] = i;
    return idx;
  }

  static void partition(const std::vector<std::vector<double>> &x,
                        const std::vector<std::size_t> &idx, const Node &node,
                        std::vector<std::size_t> &left, std::vector<std::size_t> &right) {
    for (const auto i : idx)
      (x[i][node.feature] > node.threshold ? right : left).push_back(i);
  }

  static int majority(const std::vector<int> &y, const std::vector<std::size_t> &idx) {
    int ones = 0;
    for (const auto i : idx)
      ones += y[i];
    return 2 * ones > static_cast<int>(idx.size()) ? 1 : 0;
  }

  static Node best_split(const std::vector<std::vector<double>> &x, const std::vector<int> &y,
                         const std::vector<std::size_t> &idx) {
    Node best;
    const int fallback = idx.empty() ? 0 : majority(y, idx);
    best.threshold = std::numeric_limits<double>::infinity();
    best.below = best.above = fallback;
    if (idx.empty())
      return best;
    int best_errors = 0;
    for (const auto i : idx)
      best_errors += y[i] != fallback ? 1 : 0;

    for (std::size_t f = 0; f < x[idx.front()].size(); ++f) {
      std::vector<std::size_t> order = idx;
      std::sort(order.begin(), order.end(),
                [&](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
      int ones_total = 0;
      for (const auto i : order)
        ones_total += y[i];
      int ones_below = 0;
      for (std::size_t j = 0; j + 1 < order.size(); ++j) {
        ones_below += y[order[j]];
        if (x[order[j]][f] == x[order[j + 1]][f])
          continue;
        const int n_below = static_cast<int>(j + 1);
        const int n_above = static_cast<int>(order.size()) - n_below;
        const int ones_above = ones_total - ones_below;
        // Each side predicts its majority label.
        const int below_label = 2 * ones_below > n_below ? 1 : 0;
        const int above_label = 2 * ones_above > n_above ? 1 : 0;
        const int errors = (below_label ? n_below - ones_below : ones_below) +
                           (above_label ? n_above - ones_above : ones_above);
        if (errors < best_errors) {
          best_errors = errors;
          best = {f, 0.5 * (x[order[j]][f] + x[order[j + 1]][f]), below_label, above_label};
        }
      }
    }
    return best;
  }

  Node root_;
  Node children_[2];
};

} // namespace ddt::oracle
