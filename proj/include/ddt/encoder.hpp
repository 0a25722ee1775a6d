#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ddt/gaussian_ot.hpp"
#include "ddt/image.hpp"
#include "ddt/prototype.hpp"

namespace ddt {

struct ConvLayerSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;

  bool operator==(const ConvLayerSpec &) const = default;
};

/**
 * Encoder architecture: a chain of "same"-padded convolutions (each followed
 * by ReLU) and dense layers (ReLU on all but the last). The last dense layer
 * produces the raw 2K outputs: K means followed by K pre-softplus variances.
 *
 * Canonical text form, tokens separated by single spaces:
 *   input:32x32x3 conv:3-16:k3:s2 conv:16-32:k3:s2 dense:32
 */
struct Architecture {
  int input_height = 32;
  int input_width = 32;
  int input_channels = 3;
  std::vector<ConvLayerSpec> convs;
  std::vector<int> dense;

  std::string canonical() const;
  /// Throws ConfigError on malformed text or inconsistent shapes.
  static Architecture parse(std::string_view text);
  /// Throws ConfigError when the layer chain does not line up.
  void validate() const;

  bool operator==(const Architecture &) const = default;
};

/// conv 3->16->32->64 (3x3, stride 2), flatten, dense -> 2K.
Architecture default_architecture(int embedding_dim, int image_size = 32);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  bool operator==(const AdamState &) const = default;
};

/**
 * All learnable parameters plus optimizer state.
 *
 * Flat weight order: for each conv layer, kernel [out][in][ky][kx] then bias
 * [out]; for each dense layer, matrix [out][in] then bias [out]; then the
 * optional head matrix [C][K] and bias [C]. Dense layers consume the
 * flattened feature map in [channel][y][x] order.
 */
struct EncoderParams {
  Architecture arch;
  int embedding_dim = 0;
  int num_classes = 0;
  bool has_head = false;
  std::vector<double> weights;
  AdamState opt;

  bool operator==(const EncoderParams &) const = default;
};

struct LayerSlice {
  std::string name;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  int rows = 0; // output units / channels
  int cols = 0; // fan-in
};

/// Slices of EncoderParams::weights, in storage order.
std::vector<LayerSlice> parameter_layout(const Architecture &arch, int num_classes,
                                         bool with_head);
std::size_t parameter_count(const Architecture &arch, int num_classes, bool with_head);

EncoderParams init_encoder(const Architecture &arch, int embedding_dim, int num_classes,
                           std::uint64_t seed, bool with_head = false);

struct Batch {
  std::vector<Image> images;
  std::vector<int> labels;
};

/// s_k = softplus(raw_{K+k}) + kVarianceOffset.
inline constexpr double kVarianceOffset = 1e-6;

std::vector<GaussianEmbedding> encode(const EncoderParams &params,
                                      std::span<const Image> images);
/// Head logits computed from the embedding means. Requires a head.
std::vector<std::vector<double>> head_logits(const EncoderParams &params,
                                             std::span<const Image> images);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grads;
  /// Hash of every ReLU on/off state in the forward pass. Two parameter
  /// vectors with equal hashes lie in the same linear region of the network.
  std::uint64_t activation_pattern = 0;
};

/// Mean W2 distance of each embedding to its class component.
LossAndGrad ddt_loss_and_grad(const EncoderParams &params, const Batch &batch,
                              const PrototypeDistribution &proto);
/// Mean softmax cross-entropy of the head logits.
LossAndGrad ce_loss_and_grad(const EncoderParams &params, const Batch &batch);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; returns the updated parameters.
EncoderParams adam_step(EncoderParams params, std::span<const double> grads, double lr,
                        const AdamHyper &hyper = {});

using LossFunction = std::function<LossAndGrad(const EncoderParams &)>;

/// Gradient entries whose magnitudes are both below this are compared in
/// absolute rather than relative terms.
inline constexpr double kGradCheckFloor = 1e-3;
inline constexpr int kGradCheckRefinements = 4;

/**
 * Max over parameters of |analytic - numeric| / max(|analytic|, |numeric|,
 * kGradCheckFloor), where numeric is the central difference with step h.
 * When the two probes of a parameter land in different ReLU regions the
 * stencil straddles a kink; the step is then shrunk tenfold (at most
 * kGradCheckRefinements times) until both probes share a region.
 */
double finite_diff_check(const EncoderParams &params, const LossFunction &loss, double h);
double finite_diff_check(const EncoderParams &params, const Batch &batch,
                         const PrototypeDistribution &proto, double h);

} // namespace ddt
