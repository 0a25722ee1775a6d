#include "doctest.h"

#include <cmath>
#include <random>

#include "ddt/checkpoint.hpp"
#include "ddt/encoder.hpp"
#include "ddt/errors.hpp"
#include "support/oracles.hpp"

using namespace ddt;

namespace {

const char *kTinyArch = "input:8x8x3 conv:3-4:k3:s2 conv:4-6:k3:s2 dense:12 dense:8";

Batch random_batch(int n, int size, std::uint64_t seed, int classes = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch b;
  for (int i = 0; i < n; ++i) {
    Image img(size, size);
    for (auto &v : img.pixels)
      v = u(rng);
    b.images.push_back(std::move(img));
    b.labels.push_back(i % classes);
  }
  return b;
}

// Zeroes the final dense layer and sets its bias to `bias`.
void stub_output(EncoderParams &p, const std::vector<double> &bias) {
  const auto layout = parameter_layout(p.arch, p.num_classes, p.has_head);
  const auto &last = layout[p.arch.convs.size() + p.arch.dense.size() - 1];
  for (int i = 0; i < last.rows * last.cols; ++i)
    p.weights[last.weight_offset + i] = 0.0;
  for (int i = 0; i < last.rows; ++i)
    p.weights[last.bias_offset + i] = bias[i];
}

// Raw value whose softplus plus the variance offset is exactly 1.
double unit_variance_raw() { return std::log(std::expm1(1.0 - kVarianceOffset)); }

} // namespace

TEST_CASE("arch: canonical text round-trips and validates chains") {
  const auto arch = default_architecture(16);
  CHECK(arch.canonical() ==
        "input:32x32x3 conv:3-16:k3:s2 conv:16-32:k3:s2 conv:32-64:k3:s2 dense:32");
  CHECK(Architecture::parse(arch.canonical()) == arch);
  CHECK_THROWS_AS(Architecture::parse("input:32x32x3 conv:3-16:k3:s2 conv:8-32:k3:s2 dense:32"),
                  ConfigError);
  CHECK_THROWS_AS(Architecture::parse("input:32x32x3 conv:3-16:k4:s2 dense:32"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("input:32x32x3 conv:3-16:k3:s2"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("input:32x32x3 pool:2 dense:4"), ConfigError);
  CHECK_THROWS_AS(Architecture::parse("input:32x32x3 dense:4 conv:3-16:k3:s2"), ConfigError);
}

TEST_CASE("init_encoder: parameter count matches layer arithmetic") {
  // conv 3x3 layers: out * in * 9 + out; dense: out * in + out.
  const std::size_t conv = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64);
  const std::size_t dense = 32 * (64 * 4 * 4) + 32;
  const auto p = init_encoder(default_architecture(16), 16, 2, 1);
  CHECK(p.weights.size() == conv + dense);
  CHECK(p.weights.size() == 56384);
  CHECK(p.opt.m.size() == p.weights.size());
  CHECK(p.opt.v.size() == p.weights.size());
  CHECK(p.opt.step == 0);
  const auto with_head = init_encoder(default_architecture(16), 16, 2, 1, true);
  CHECK(with_head.weights.size() == conv + dense + 2 * 16 + 2);
}

TEST_CASE("init_encoder: deterministic per seed, zero biases") {
  const auto arch = default_architecture(16);
  const auto a = init_encoder(arch, 16, 2, 42);
  CHECK(a == init_encoder(arch, 16, 2, 42));
  CHECK(a.weights != init_encoder(arch, 16, 2, 43).weights);
  for (const auto &slice : parameter_layout(arch, 2, false))
    for (int i = 0; i < slice.rows; ++i)
      CHECK(a.weights[slice.bias_offset + i] == 0.0);
}

TEST_CASE("init_encoder: rejects output width other than 2K") {
  CHECK_THROWS_AS(init_encoder(default_architecture(16), 8, 2, 0), ConfigError);
  CHECK_THROWS_AS(init_encoder(default_architecture(16), 16, 0, 0), ConfigError);
}

TEST_CASE("encode: shapes, positivity and determinism") {
  const auto p = init_encoder(default_architecture(16), 16, 2, 3);
  const auto batch = random_batch(4, 32, 9);
  const auto out = encode(p, batch.images);
  REQUIRE(out.size() == 4);
  for (const auto &e : out) {
    CHECK(e.mu.size() == 16);
    CHECK(e.s.size() == 16);
    for (const double s : e.s)
      CHECK(s >= kVarianceOffset);
  }
  const auto again = encode(p, batch.images);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].mu == again[i].mu);
    CHECK(out[i].s == again[i].s);
  }
  CHECK_THROWS_AS(encode(p, random_batch(1, 16, 1).images), ShapeError);
}

TEST_CASE("encode: zero raw output gives softplus(0) variance") {
  auto p = init_encoder(default_architecture(4, 16), 4, 2, 3);
  stub_output(p, std::vector<double>(8, 0.0));
  const auto e = encode(p, random_batch(1, 16, 2).images).front();
  for (int k = 0; k < 4; ++k) {
    CHECK(e.mu[k] == 0.0);
    CHECK(e.s[k] == doctest::Approx(0.693148).epsilon(1e-6));
    CHECK(e.s[k] == std::log(2.0) + 1e-6);
  }
}

TEST_CASE("ddt loss: zero at the prototype, one for a unit mean offset") {
  const PrototypeDistribution proto(2, 4);
  auto p = init_encoder(default_architecture(4, 16), 4, 2, 5);

  const double r = unit_variance_raw();
  stub_output(p, {1, 1, 0, 0, r, r, r, r});
  auto batch = random_batch(3, 16, 4);
  batch.labels = {0, 0, 0};
  CHECK(ddt_loss_and_grad(p, batch, proto).loss <= 1e-9);

  stub_output(p, {1, 2, 0, 0, r, r, r, r});
  auto single = random_batch(1, 16, 4);
  single.labels = {0};
  CHECK(ddt_loss_and_grad(p, single, proto).loss == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ddt loss: error paths") {
  const auto p = init_encoder(default_architecture(4, 16), 4, 2, 5);
  auto batch = random_batch(2, 16, 4);
  batch.labels = {0, 2};
  CHECK_THROWS_AS(ddt_loss_and_grad(p, batch, PrototypeDistribution(2, 4)), IndexError);
  CHECK_THROWS_AS(ddt_loss_and_grad(p, random_batch(2, 32, 4), PrototypeDistribution(2, 4)),
                  ShapeError);
  CHECK_THROWS_AS(ddt_loss_and_grad(p, random_batch(2, 16, 4), PrototypeDistribution(2, 8)),
                  DimensionError);
}

TEST_CASE("ce loss: uniform and saturated logits") {
  auto p = init_encoder(default_architecture(4, 16), 4, 2, 5, true);
  const auto layout = parameter_layout(p.arch, 2, true);
  const auto &head = layout.back();
  for (int i = 0; i < head.rows * head.cols; ++i)
    p.weights[head.weight_offset + i] = 0.0;

  auto batch = random_batch(2, 16, 8);
  CHECK(ce_loss_and_grad(p, batch).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  p.weights[head.bias_offset] = 25.0;
  batch.labels = {0, 0};
  CHECK(ce_loss_and_grad(p, batch).loss <= 1e-8);

  CHECK_THROWS_AS(ce_loss_and_grad(init_encoder(default_architecture(4, 16), 4, 2, 5), batch),
                  ConfigError);
}

TEST_CASE("gradients: finite-difference agreement on random tiny networks") {
  const PrototypeDistribution proto(2, 4);
  const auto arch = Architecture::parse(kTinyArch);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto p = init_encoder(arch, 4, 2, seed, true);
    const auto batch = random_batch(4, 8, 100 + seed);
    CHECK(finite_diff_check(p, batch, proto, 1e-3) <= 1e-4);
    CHECK(finite_diff_check(
              p, [&](const EncoderParams &q) { return ce_loss_and_grad(q, batch); }, 1e-3) <=
          1e-4);
  }
}

TEST_CASE("gradients: a conv-free network checks out as well") {
  const PrototypeDistribution proto(2, 2);
  const auto p = init_encoder(Architecture::parse("input:4x4x3 dense:5 dense:4"), 2, 2, 9, true);
  const auto batch = random_batch(3, 4, 12);
  CHECK(finite_diff_check(p, batch, proto, 1e-3) <= 1e-4);
}

TEST_CASE("gradients: a corrupted gradient entry is detected") {
  const PrototypeDistribution proto(2, 4);
  const auto p = init_encoder(Architecture::parse(kTinyArch), 4, 2, 1);
  const auto batch = random_batch(4, 8, 7);
  const auto clean = ddt_loss_and_grad(p, batch, proto).grads;
  const auto worst = static_cast<std::size_t>(
      std::max_element(clean.begin(), clean.end(),
                       [](double a, double b) { return std::abs(a) < std::abs(b); }) -
      clean.begin());
  const double error = finite_diff_check(
      p,
      [&](const EncoderParams &q) {
        auto lg = ddt_loss_and_grad(q, batch, proto);
        lg.grads[worst] *= 2.0;
        return lg;
      },
      1e-3);
  CHECK(error > 1e-2);
}

TEST_CASE("gradients: zero-weight network with symmetric inputs") {
  const PrototypeDistribution proto(2, 4);
  auto p = init_encoder(Architecture::parse(kTinyArch), 4, 2, 1);
  std::fill(p.weights.begin(), p.weights.end(), 0.0);
  Batch batch;
  batch.images = {Image(8, 8, 0.5), Image(8, 8, 0.5)};
  batch.labels = {0, 1};
  CHECK(finite_diff_check(p, batch, proto, 1e-3) <= 1e-4);
}

TEST_CASE("adam: textbook updates") {
  EncoderParams p;
  p.weights = {0.5};
  p.opt = {{0.0}, {0.0}, 0};

  const auto still = adam_step(p, std::vector<double>{0.0}, 1e-3);
  CHECK(still.weights == p.weights);
  CHECK(still.opt.step == 1);

  const double g = 0.3, lr = 1e-2;
  const auto one = adam_step(p, std::vector<double>{g}, lr);
  CHECK(one.weights[0] == doctest::Approx(0.5 - lr * g / (std::abs(g) + 1e-8)).epsilon(1e-14));
  CHECK(std::abs(one.weights[0] - 0.5) <= lr * (1 + 1e-12));

  const auto two = adam_step(one, std::vector<double>{g}, lr);
  const auto expected = oracle::adam_trajectory(0.5, {g, g}, lr);
  CHECK(one.weights[0] == doctest::Approx(expected[0]).epsilon(1e-15));
  CHECK(two.weights[0] == doctest::Approx(expected[1]).epsilon(1e-15));
  CHECK(two.opt.step == 2);

  CHECK_THROWS_AS(adam_step(p, std::vector<double>{1.0, 2.0}, lr), DimensionError);
}

TEST_CASE("adam: lr = 0 leaves weights untouched on a real network") {
  const auto p = init_encoder(Architecture::parse(kTinyArch), 4, 2, 2);
  const auto batch = random_batch(2, 8, 3);
  const auto lg = ddt_loss_and_grad(p, batch, PrototypeDistribution(2, 4));
  const auto next = adam_step(p, lg.grads, 0.0);
  CHECK(next.weights == p.weights);
  CHECK(next.opt.step == 1);
}

TEST_CASE("checkpoint: byte-exact round trip") {
  auto p = init_encoder(Architecture::parse(kTinyArch), 4, 2, 2, true);
  const auto lg = ce_loss_and_grad(p, random_batch(2, 8, 3));
  p = adam_step(std::move(p), lg.grads, 1e-3);
  const Checkpoint ckpt{p, TrainingMode::ce};
  const auto bytes = serialize_checkpoint(ckpt);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DDT1");
  const auto back = deserialize_checkpoint(bytes);
  CHECK(back == ckpt);
  CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("checkpoint: malformed input") {
  const Checkpoint ckpt{init_encoder(Architecture::parse(kTinyArch), 4, 2, 2), TrainingMode::ddt};
  auto bytes = serialize_checkpoint(ckpt);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), FormatError);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(deserialize_checkpoint(trailing), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), FormatError);
}
