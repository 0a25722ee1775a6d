#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ddt {

/**
 * Fixed multi-modal prototype distribution in a K-dimensional latent space.
 *
 * Component c is N(m_c, I) where m_c is a binary vector with a contiguous
 * block of p = K / C ones starting at p * c. Blocks of different classes do
 * not overlap, so the components sum to the all-ones vector.
 */
class PrototypeDistribution {
public:
  /// Throws DimensionError unless C >= 1, K >= C and K % C == 0.
  PrototypeDistribution(int num_classes, int embedding_dim);

  int num_classes() const { return num_classes_; }
  int embedding_dim() const { return embedding_dim_; }
  int neurons_per_class() const { return embedding_dim_ / num_classes_; }

  /// m_c. Throws IndexError for c outside [0, C).
  std::span<const double> class_mean(int c) const;

  /// ||m_c1 - m_c2||_2, the W2 distance between two identity-covariance
  /// components.
  double component_distance(int c1, int c2) const;

  bool operator==(const PrototypeDistribution &other) const = default;

private:
  void check_label(int c) const;

  int num_classes_;
  int embedding_dim_;
  std::vector<double> means_; // C x K, row-major
};

inline PrototypeDistribution build_prototype(int num_classes, int embedding_dim) {
  return PrototypeDistribution(num_classes, embedding_dim);
}

} // namespace ddt
