#pragma once

#include <functional>
#include <random>
#include <vector>

#include "ddt/encoder.hpp"
#include "ddt/image.hpp"

namespace ddt {

/// Orientation of the seam along which two images are joined.
enum class MixAxis {
  vertical,   // left half from a, right half from b
  horizontal, // top half from a, bottom half from b
};

/**
 * Joins the first half of `a` with the second half of `b` without blending.
 * Throws ShapeError on mismatched sizes and ConfigError when the split
 * dimension is odd.
 */
Image spatial_mixup(const Image &a, const Image &b, MixAxis axis = MixAxis::vertical);

/// Mirrors columns: x -> W - 1 - x.
Image hflip(const Image &a);

/// Images available for mixing, indexed by class label.
using ClassPool = std::vector<std::vector<std::reference_wrapper<const Image>>>;

struct AugmentConfig {
  double p_mix = 0.5;
  double p_flip = 0.5;
  MixAxis axis = MixAxis::vertical;
};

/**
 * Per sample: with probability p_mix, mix with a uniformly drawn image of the
 * same class from `pool`; then with probability p_flip, flip horizontally.
 * Two uniform draws are consumed per sample regardless of outcome, plus one
 * pool draw when mixing. Labels are unchanged.
 */
Batch augment_pretrain(const Batch &batch, const ClassPool &pool, std::mt19937_64 &rng,
                       const AugmentConfig &config);

/// Mixes the target sample with a freshly drawn same-class source image.
Image augment_finetune(const Image &target, const std::vector<std::reference_wrapper<const Image>> &source_same_class,
                       std::mt19937_64 &rng, MixAxis axis = MixAxis::vertical);

} // namespace ddt
