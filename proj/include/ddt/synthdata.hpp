#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddt/image.hpp"

namespace ddt {

enum class ArtifactKind { noise_patch, checkerboard_patch };
enum class Split { train, val, test };

std::string to_string(ArtifactKind kind);
std::string to_string(Split split);
/// Throws ConfigError for unknown names.
ArtifactKind parse_artifact(std::string_view text);
std::optional<Split> parse_split(std::string_view text);

struct DomainStyle {
  double brightness = 0.0; // additive, in [-0.2, 0.2]
  double contrast = 1.0;   // gain around 0.5, in [0.8, 1.2]
  int hue = 0;             // background palette index
};

/**
 * Recipe for one synthetic domain. Every sample pair shares a base "face"
 * image; the real (label 0) sample is the base, the fake (label 1) sample is
 * the base with one square artifact patch pasted inside the face.
 */
struct DomainSpec {
  std::string domain_id = "A";
  int image_size = 32;
  int per_class_train = 500;
  int per_class_val = 0;
  int per_class_test = 100;
  ArtifactKind artifact = ArtifactKind::noise_patch;
  DomainStyle style;
  std::uint64_t seed = 0;

  /// Throws ConfigError on invariant violations.
  void validate() const;
};

/// Preset "A": noise patches, neutral style, with a validation split.
/// Preset "B": checkerboard patches, brightness +0.1, contrast 1.1,
/// shifted hue, no validation split.
DomainSpec preset_domain(std::string_view preset, std::uint64_t seed, int per_class_train,
                         int per_class_test);

struct LabeledSample {
  Image image;
  int label = 0;
  std::string domain;
  Split split = Split::train;

  bool operator==(const LabeledSample &) const = default;
};

struct Dataset {
  std::vector<LabeledSample> samples;

  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
  bool has_split(Split split) const { return count(split) > 0; }

  bool operator==(const Dataset &) const = default;
};

/// Side length of the square artifact patch for a given image size.
inline int patch_size(int image_size) { return image_size / 4; }

/// Deterministic in spec.seed. Pixel values are multiples of 1/255.
Dataset generate_domain(const DomainSpec &spec);

double quantize8(double v);

/// Binary PPM (P6, maxval 255). Reading throws IoError / FormatError.
void write_ppm(const Image &image, const std::filesystem::path &path);
Image read_ppm(const std::filesystem::path &path);

/**
 * Writes one PPM per sample under `dir/images/` and a manifest `dir/index.tsv`
 * with header "path\tlabel\tdomain\tsplit" (paths relative to dir, LF line
 * endings). Returns the manifest path.
 */
std::filesystem::path write_dataset(const Dataset &ds, const std::filesystem::path &dir);
/// Throws IoError, FormatError, or ManifestError (naming the offending row).
Dataset load_dataset(const std::filesystem::path &dir);

} // namespace ddt
