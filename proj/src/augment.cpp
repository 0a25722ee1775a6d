#include "ddt/augment.hpp"

#include <algorithm>
#include <string>

#include "ddt/errors.hpp"

namespace ddt {

namespace {

const Image &draw(const std::vector<std::reference_wrapper<const Image>> &pool,
                  std::mt19937_64 &rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)].get();
}

} // namespace

Image spatial_mixup(const Image &a, const Image &b, MixAxis axis) {
  if (a.height != b.height || a.width != b.width || a.pixels.size() != b.pixels.size())
    throw ShapeError("cannot mix " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                     " with " + std::to_string(b.height) + "x" + std::to_string(b.width));
  const int extent = axis == MixAxis::vertical ? a.width : a.height;
  if (extent % 2 != 0)
    throw ConfigError("spatial mixup needs an even " +
                      std::string(axis == MixAxis::vertical ? "width" : "height") + ", got " +
                      std::to_string(extent));

  Image out = a;
  const std::size_t row = static_cast<std::size_t>(a.width) * Image::kChannels;
  if (axis == MixAxis::vertical) {
    const std::size_t half = row / 2;
    for (int y = 0; y < a.height; ++y) {
      const std::size_t start = y * row + half;
      std::copy_n(b.pixels.begin() + start, half, out.pixels.begin() + start);
    }
  } else {
    const std::size_t start = static_cast<std::size_t>(a.height / 2) * row;
    std::copy(b.pixels.begin() + start, b.pixels.end(), out.pixels.begin() + start);
  }
  return out;
}

Image hflip(const Image &a) {
  Image out(a.height, a.width);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < Image::kChannels; ++c)
        out.at(y, a.width - 1 - x, c) = a.at(y, x, c);
  return out;
}

Batch augment_pretrain(const Batch &batch, const ClassPool &pool, std::mt19937_64 &rng,
                       const AugmentConfig &config) {
  if (config.p_mix > 0.0) {
    for (const int y : batch.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= pool.size() || pool[y].empty())
        throw ConfigError("no mixup pool images for class " + std::to_string(y));
    }
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Batch out;
  out.labels = batch.labels;
  out.images.reserve(batch.images.size());
  for (std::size_t i = 0; i < batch.images.size(); ++i) {
    Image img = batch.images[i];
    if (coin(rng) < config.p_mix)
      img = spatial_mixup(img, draw(pool[batch.labels[i]], rng), config.axis);
    if (coin(rng) < config.p_flip)
      img = hflip(img);
    out.images.push_back(std::move(img));
  }
  return out;
}

Image augment_finetune(const Image &target,
                       const std::vector<std::reference_wrapper<const Image>> &source_same_class,
                       std::mt19937_64 &rng, MixAxis axis) {
  if (source_same_class.empty())
    throw ConfigError("fine-tuning mixup needs at least one same-class source image");
  return spatial_mixup(target, draw(source_same_class, rng), axis);
}

} // namespace ddt
