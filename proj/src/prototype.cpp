#include "ddt/prototype.hpp"

#include <cmath>
#include <string>

#include "ddt/errors.hpp"

namespace ddt {

PrototypeDistribution::PrototypeDistribution(int num_classes, int embedding_dim)
    : num_classes_(num_classes), embedding_dim_(embedding_dim) {
  if (num_classes < 1)
    throw DimensionError("class count must be >= 1, got " + std::to_string(num_classes));
  if (embedding_dim < num_classes || embedding_dim % num_classes != 0)
    throw DimensionError("embedding dim " + std::to_string(embedding_dim) +
                         " is not a positive multiple of class count " +
                         std::to_string(num_classes));

  const int p = embedding_dim / num_classes;
  means_.assign(static_cast<std::size_t>(num_classes) * embedding_dim, 0.0);
  for (int c = 0; c < num_classes; ++c)
    for (int i = p * c; i < p * (c + 1); ++i)
      means_[static_cast<std::size_t>(c) * embedding_dim + i] = 1.0;
}

void PrototypeDistribution::check_label(int c) const {
  if (c < 0 || c >= num_classes_)
    throw IndexError("class label " + std::to_string(c) + " outside [0, " +
                     std::to_string(num_classes_) + ")");
}

std::span<const double> PrototypeDistribution::class_mean(int c) const {
  check_label(c);
  return {means_.data() + static_cast<std::size_t>(c) * embedding_dim_,
          static_cast<std::size_t>(embedding_dim_)};
}

double PrototypeDistribution::component_distance(int c1, int c2) const {
  const auto a = class_mean(c1);
  const auto b = class_mean(c2);
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

} // namespace ddt
