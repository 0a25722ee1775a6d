#include "ddt/encoder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "ddt/errors.hpp"

namespace ddt {

namespace {

using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

// Eigen picks summation order from pointer alignment, and std::vector storage
// has no fixed alignment. Products and reductions therefore never touch the
// flat weight or gradient arrays directly: weight slices are copied into
// owned (aligned) storage first, and gradient terms land in a temporary.
RowMat owned(const double *data, Eigen::Index rows, Eigen::Index cols) {
  return ConstRowMap(data, rows, cols);
}

int parse_int(std::string_view text, std::string_view token) {
  int value = 0;
  const auto *end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("bad integer '" + std::string(text) + "' in arch token '" +
                      std::string(token) + "'");
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return parts;
}

struct ConvGeometry {
  int in_c, out_c, kernel, stride, pad;
  int in_h, in_w, out_h, out_w;

  int in_area() const { return in_h * in_w; }
  int out_area() const { return out_h * out_w; }
  int patch() const { return in_c * kernel * kernel; }
};

std::vector<ConvGeometry> conv_geometry(const Architecture &arch) {
  std::vector<ConvGeometry> geo;
  int h = arch.input_height, w = arch.input_width;
  for (const auto &c : arch.convs) {
    ConvGeometry g{c.in_channels, c.out_channels, c.kernel, c.stride, c.kernel / 2, h, w, 0, 0};
    g.out_h = (h + 2 * g.pad - c.kernel) / c.stride + 1;
    g.out_w = (w + 2 * g.pad - c.kernel) / c.stride + 1;
    geo.push_back(g);
    h = g.out_h;
    w = g.out_w;
  }
  return geo;
}

int flattened_features(const Architecture &arch) {
  const auto geo = conv_geometry(arch);
  if (geo.empty())
    return arch.input_height * arch.input_width * arch.input_channels;
  return geo.back().out_c * geo.back().out_area();
}

// Columns are indexed b * out_area + oy * out_w + ox; rows (ci * k + ky) * k + kx.
Mat im2col(const Mat &x, const ConvGeometry &g, int batch) {
  Mat cols = Mat::Zero(g.patch(), static_cast<Eigen::Index>(batch) * g.out_area());
  for (int b = 0; b < batch; ++b)
    for (int ci = 0; ci < g.in_c; ++ci)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int row = (ci * g.kernel + ky) * g.kernel + kx;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.in_h)
              continue;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride + kx - g.pad;
              if (ix < 0 || ix >= g.in_w)
                continue;
              cols(row, b * g.out_area() + oy * g.out_w + ox) =
                  x(ci, b * g.in_area() + iy * g.in_w + ix);
            }
          }
        }
  return cols;
}

Mat col2im(const Mat &cols, const ConvGeometry &g, int batch) {
  Mat x = Mat::Zero(g.in_c, static_cast<Eigen::Index>(batch) * g.in_area());
  for (int b = 0; b < batch; ++b)
    for (int ci = 0; ci < g.in_c; ++ci)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int row = (ci * g.kernel + ky) * g.kernel + kx;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.in_h)
              continue;
            for (int ox = 0; ox < g.out_w; ++ox) {
              const int ix = ox * g.stride + kx - g.pad;
              if (ix < 0 || ix >= g.in_w)
                continue;
              x(ci, b * g.in_area() + iy * g.in_w + ix) +=
                  cols(row, b * g.out_area() + oy * g.out_w + ox);
            }
          }
        }
  return x;
}

// [channels x (batch * area)] <-> [(channels * area) x batch]
Mat flatten_maps(const Mat &maps, int channels, int area, int batch) {
  Mat flat(static_cast<Eigen::Index>(channels) * area, batch);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      flat.col(b).segment(static_cast<Eigen::Index>(c) * area, area) =
          maps.row(c).segment(static_cast<Eigen::Index>(b) * area, area).transpose();
  return flat;
}

Mat unflatten_maps(const Mat &flat, int channels, int area, int batch) {
  Mat maps(channels, static_cast<Eigen::Index>(batch) * area);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      maps.row(c).segment(static_cast<Eigen::Index>(b) * area, area) =
          flat.col(b).segment(static_cast<Eigen::Index>(c) * area, area).transpose();
  return maps;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Forward pass over a batch that keeps what backprop needs.
class Network {
public:
  Network(const EncoderParams &params)
      : params_(params), geo_(conv_geometry(params.arch)),
        layout_(parameter_layout(params.arch, params.num_classes, params.has_head)) {}

  // Returns raw outputs [2K x batch].
  const Mat &forward(std::span<const Image> images) {
    const auto &arch = params_.arch;
    batch_ = static_cast<int>(images.size());
    const int area = arch.input_height * arch.input_width;
    for (const auto &img : images)
      if (img.height != arch.input_height || img.width != arch.input_width ||
          img.pixels.size() != static_cast<std::size_t>(area) * Image::kChannels)
        throw ShapeError("image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " does not match encoder input " +
                         std::to_string(arch.input_height) + "x" +
                         std::to_string(arch.input_width));
    if (arch.input_channels != Image::kChannels)
      throw ShapeError("encoder expects " + std::to_string(arch.input_channels) +
                       " channels, images carry 3");

    Mat x(Image::kChannels, static_cast<Eigen::Index>(batch_) * area);
    for (int b = 0; b < batch_; ++b)
      for (int p = 0; p < area; ++p)
        for (int c = 0; c < Image::kChannels; ++c)
          x(c, b * area + p) = images[b].pixels[static_cast<std::size_t>(p) * Image::kChannels + c];

    const double *w = params_.weights.data();
    conv_cols_.clear();
    conv_act_.clear();
    for (std::size_t l = 0; l < geo_.size(); ++l) {
      const auto &g = geo_[l];
      const auto &slice = layout_[l];
      conv_cols_.push_back(im2col(l == 0 ? x : conv_act_.back(), g, batch_));
      const RowMat kernel = owned(w + slice.weight_offset, g.out_c, g.patch());
      ConstVecMap bias(w + slice.bias_offset, g.out_c);
      Mat z = kernel * conv_cols_.back();
      z.colwise() += bias;
      conv_act_.push_back(z.cwiseMax(0.0));
    }

    Mat features = geo_.empty()
                       ? flatten_maps(x, Image::kChannels, area, batch_)
                       : flatten_maps(conv_act_.back(), geo_.back().out_c,
                                      geo_.back().out_area(), batch_);
    dense_in_.clear();
    for (std::size_t d = 0; d < arch.dense.size(); ++d) {
      const auto &slice = layout_[geo_.size() + d];
      const RowMat matrix = owned(w + slice.weight_offset, slice.rows, slice.cols);
      ConstVecMap bias(w + slice.bias_offset, slice.rows);
      dense_in_.push_back(std::move(features));
      features = matrix * dense_in_.back();
      features.colwise() += bias;
      if (d + 1 < arch.dense.size())
        features = features.cwiseMax(0.0);
    }
    raw_ = std::move(features);
    return raw_;
  }

  std::uint64_t activation_pattern() const {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    auto mix = [&h](const Mat &m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        h ^= m.data()[i] > 0.0 ? 1u : 0u;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto &a : conv_act_)
      mix(a);
    for (std::size_t d = 1; d < dense_in_.size(); ++d)
      mix(dense_in_[d]);
    return h;
  }

  // Accumulates d(loss)/d(weights) into grads given d(loss)/d(raw).
  void backward(const Mat &d_raw, std::vector<double> &grads) const {
    const auto &arch = params_.arch;
    const double *w = params_.weights.data();

    Mat delta = d_raw;
    for (std::size_t d = arch.dense.size(); d-- > 0;) {
      const auto &slice = layout_[geo_.size() + d];
      if (d + 1 < arch.dense.size()) {
        const Mat &out = dense_in_[d + 1];
        delta = delta.cwiseProduct((out.array() > 0.0).cast<double>().matrix());
      }
      const Mat d_matrix = delta * dense_in_[d].transpose();
      RowMap(grads.data() + slice.weight_offset, slice.rows, slice.cols) += d_matrix;
      const Eigen::VectorXd d_bias = delta.rowwise().sum();
      VecMap(grads.data() + slice.bias_offset, slice.rows) += d_bias;
      const RowMat matrix = owned(w + slice.weight_offset, slice.rows, slice.cols);
      delta = matrix.transpose() * delta;
    }
    if (geo_.empty())
      return;

    delta = unflatten_maps(delta, geo_.back().out_c, geo_.back().out_area(), batch_);
    for (std::size_t l = geo_.size(); l-- > 0;) {
      const auto &g = geo_[l];
      const auto &slice = layout_[l];
      delta = delta.cwiseProduct((conv_act_[l].array() > 0.0).cast<double>().matrix());
      const Mat d_kernel = delta * conv_cols_[l].transpose();
      RowMap(grads.data() + slice.weight_offset, g.out_c, g.patch()) += d_kernel;
      const Eigen::VectorXd d_bias = delta.rowwise().sum();
      VecMap(grads.data() + slice.bias_offset, g.out_c) += d_bias;
      if (l == 0)
        break;
      const RowMat kernel = owned(w + slice.weight_offset, g.out_c, g.patch());
      Mat d_cols = kernel.transpose() * delta;
      delta = col2im(d_cols, g, batch_);
    }
  }

  const LayerSlice &head_slice() const { return layout_.back(); }

private:
  const EncoderParams &params_;
  std::vector<ConvGeometry> geo_;
  std::vector<LayerSlice> layout_;
  int batch_ = 0;
  std::vector<Mat> conv_cols_;
  std::vector<Mat> conv_act_;
  std::vector<Mat> dense_in_;
  Mat raw_;
};

GaussianEmbedding embedding_from_raw(const Mat &raw, int col, int k_dim) {
  GaussianEmbedding e;
  e.mu.resize(k_dim);
  e.s.resize(k_dim);
  for (int k = 0; k < k_dim; ++k) {
    e.mu[k] = raw(k, col);
    e.s[k] = softplus(raw(k_dim + k, col)) + kVarianceOffset;
  }
  return e;
}

void check_batch(const Batch &batch, int num_classes) {
  if (batch.images.empty())
    throw ShapeError("batch must hold at least one image");
  if (batch.images.size() != batch.labels.size())
    throw ShapeError("batch has " + std::to_string(batch.images.size()) + " images but " +
                     std::to_string(batch.labels.size()) + " labels");
  for (const int y : batch.labels)
    if (y < 0 || y >= num_classes)
      throw IndexError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
}

// logits [C x batch] from the mean rows of raw outputs.
Mat logits_from_raw(const EncoderParams &params, const LayerSlice &head, const Mat &raw) {
  const RowMat matrix = owned(params.weights.data() + head.weight_offset, head.rows, head.cols);
  ConstVecMap bias(params.weights.data() + head.bias_offset, head.rows);
  Mat logits = matrix * raw.topRows(params.embedding_dim);
  logits.colwise() += bias;
  return logits;
}

void require_head(const EncoderParams &params) {
  if (!params.has_head)
    throw ConfigError("encoder has no classification head");
}

} // namespace

std::string Architecture::canonical() const {
  std::ostringstream os;
  os << "input:" << input_height << 'x' << input_width << 'x' << input_channels;
  for (const auto &c : convs)
    os << " conv:" << c.in_channels << '-' << c.out_channels << ":k" << c.kernel << ":s"
       << c.stride;
  for (const int d : dense)
    os << " dense:" << d;
  return os.str();
}

Architecture Architecture::parse(std::string_view text) {
  Architecture arch;
  arch.convs.clear();
  arch.dense.clear();
  bool seen_input = false;
  std::istringstream is{std::string(text)};
  std::string token;
  while (is >> token) {
    const auto colon = token.find(':');
    if (colon == std::string::npos)
      throw ConfigError("arch token '" + token + "' lacks a ':'");
    const std::string_view kind = std::string_view(token).substr(0, colon);
    const std::string_view body = std::string_view(token).substr(colon + 1);
    if (kind == "input") {
      const auto dims = split(body, 'x');
      if (dims.size() != 3 || seen_input || !arch.convs.empty() || !arch.dense.empty())
        throw ConfigError("bad or misplaced input token '" + token + "'");
      arch.input_height = parse_int(dims[0], token);
      arch.input_width = parse_int(dims[1], token);
      arch.input_channels = parse_int(dims[2], token);
      seen_input = true;
    } else if (kind == "conv") {
      const auto parts = split(body, ':');
      if (parts.size() != 3 || parts[1].empty() || parts[1][0] != 'k' || parts[2].empty() ||
          parts[2][0] != 's' || !arch.dense.empty())
        throw ConfigError("bad or misplaced conv token '" + token + "'");
      const auto channels = split(parts[0], '-');
      if (channels.size() != 2)
        throw ConfigError("bad conv channels in '" + token + "'");
      arch.convs.push_back({parse_int(channels[0], token), parse_int(channels[1], token),
                            parse_int(parts[1].substr(1), token),
                            parse_int(parts[2].substr(1), token)});
    } else if (kind == "dense") {
      arch.dense.push_back(parse_int(body, token));
    } else {
      throw ConfigError("unknown arch token '" + token + "'");
    }
  }
  arch.validate();
  return arch;
}

void Architecture::validate() const {
  if (input_height < 1 || input_width < 1 || input_channels < 1)
    throw ConfigError("input dimensions must be positive");
  int channels = input_channels;
  for (std::size_t l = 0; l < convs.size(); ++l) {
    const auto &c = convs[l];
    if (c.in_channels != channels)
      throw ConfigError("conv layer " + std::to_string(l) + " expects " +
                        std::to_string(c.in_channels) + " input channels but receives " +
                        std::to_string(channels));
    if (c.out_channels < 1 || c.kernel < 1 || c.kernel % 2 == 0 || c.stride < 1)
      throw ConfigError("conv layer " + std::to_string(l) +
                        " needs positive channels, odd kernel and positive stride");
    channels = c.out_channels;
  }
  for (const auto &g : conv_geometry(*this))
    if (g.out_h < 1 || g.out_w < 1)
      throw ConfigError("conv stack shrinks the feature map to nothing");
  if (dense.empty())
    throw ConfigError("architecture needs at least one dense layer");
  for (const int d : dense)
    if (d < 1)
      throw ConfigError("dense widths must be positive");
}

Architecture default_architecture(int embedding_dim, int image_size) {
  Architecture arch;
  arch.input_height = image_size;
  arch.input_width = image_size;
  arch.convs = {{3, 16, 3, 2}, {16, 32, 3, 2}, {32, 64, 3, 2}};
  arch.dense = {2 * embedding_dim};
  return arch;
}

std::vector<LayerSlice> parameter_layout(const Architecture &arch, int num_classes,
                                         bool with_head) {
  arch.validate();
  std::vector<LayerSlice> layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    LayerSlice s{std::move(name), offset, 0, rows, cols};
    offset += static_cast<std::size_t>(rows) * cols;
    s.bias_offset = offset;
    offset += rows;
    layout.push_back(std::move(s));
  };
  for (std::size_t l = 0; l < arch.convs.size(); ++l) {
    const auto &c = arch.convs[l];
    add("conv" + std::to_string(l), c.out_channels, c.in_channels * c.kernel * c.kernel);
  }
  int fan_in = flattened_features(arch);
  for (std::size_t d = 0; d < arch.dense.size(); ++d) {
    add("dense" + std::to_string(d), arch.dense[d], fan_in);
    fan_in = arch.dense[d];
  }
  if (with_head)
    add("head", num_classes, arch.dense.back() / 2);
  return layout;
}

std::size_t parameter_count(const Architecture &arch, int num_classes, bool with_head) {
  const auto layout = parameter_layout(arch, num_classes, with_head);
  const auto &last = layout.back();
  return last.bias_offset + static_cast<std::size_t>(last.rows);
}

EncoderParams init_encoder(const Architecture &arch, int embedding_dim, int num_classes,
                           std::uint64_t seed, bool with_head) {
  if (embedding_dim < 1 || num_classes < 1)
    throw ConfigError("embedding dim and class count must be positive");
  arch.validate();
  if (arch.dense.back() != 2 * embedding_dim)
    throw ConfigError("final dense width " + std::to_string(arch.dense.back()) +
                      " must equal 2K = " + std::to_string(2 * embedding_dim));

  EncoderParams params;
  params.arch = arch;
  params.embedding_dim = embedding_dim;
  params.num_classes = num_classes;
  params.has_head = with_head;
  const auto layout = parameter_layout(arch, num_classes, with_head);
  params.weights.assign(parameter_count(arch, num_classes, with_head), 0.0);

  std::mt19937_64 rng(seed);
  const std::size_t last_dense = arch.convs.size() + arch.dense.size() - 1;
  for (std::size_t l = 0; l < layout.size(); ++l) {
    const auto &s = layout[l];
    // He-uniform for ReLU layers, unit-variance fan-in scaling for linear outputs.
    const double gain = l >= last_dense ? 3.0 : 6.0;
    std::uniform_real_distribution<double> dist(-std::sqrt(gain / s.cols),
                                                std::sqrt(gain / s.cols));
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.rows) * s.cols; ++i)
      params.weights[s.weight_offset + i] = dist(rng);
  }
  params.opt.m.assign(params.weights.size(), 0.0);
  params.opt.v.assign(params.weights.size(), 0.0);
  return params;
}

std::vector<GaussianEmbedding> encode(const EncoderParams &params,
                                      std::span<const Image> images) {
  if (images.empty())
    return {};
  Network net(params);
  const Mat &raw = net.forward(images);
  std::vector<GaussianEmbedding> out;
  out.reserve(images.size());
  for (int b = 0; b < static_cast<int>(images.size()); ++b)
    out.push_back(embedding_from_raw(raw, b, params.embedding_dim));
  return out;
}

std::vector<std::vector<double>> head_logits(const EncoderParams &params,
                                             std::span<const Image> images) {
  require_head(params);
  if (images.empty())
    return {};
  Network net(params);
  const Mat logits = logits_from_raw(params, net.head_slice(), net.forward(images));
  std::vector<std::vector<double>> out(images.size());
  for (std::size_t b = 0; b < images.size(); ++b)
    out[b].assign(logits.col(static_cast<Eigen::Index>(b)).data(),
                  logits.col(static_cast<Eigen::Index>(b)).data() + logits.rows());
  return out;
}

LossAndGrad ddt_loss_and_grad(const EncoderParams &params, const Batch &batch,
                              const PrototypeDistribution &proto) {
  if (proto.embedding_dim() != params.embedding_dim)
    throw DimensionError("prototype K=" + std::to_string(proto.embedding_dim()) +
                         " but encoder K=" + std::to_string(params.embedding_dim));
  check_batch(batch, proto.num_classes());
  const int k_dim = params.embedding_dim;
  const int n = static_cast<int>(batch.images.size());

  Network net(params);
  const Mat &raw = net.forward(batch.images);
  Mat d_raw = Mat::Zero(raw.rows(), raw.cols());
  LossAndGrad out;
  for (int b = 0; b < n; ++b) {
    const auto emb = embedding_from_raw(raw, b, k_dim);
    const auto mean = proto.class_mean(batch.labels[b]);
    out.loss += w2_diag_identity(emb, mean);
    const auto g = w2_grad(emb, mean);
    for (int k = 0; k < k_dim; ++k) {
      d_raw(k, b) = g.mu[k] / n;
      d_raw(k_dim + k, b) = g.s[k] * sigmoid(raw(k_dim + k, b)) / n;
    }
  }
  out.loss /= n;
  out.grads.assign(params.weights.size(), 0.0);
  net.backward(d_raw, out.grads);
  out.activation_pattern = net.activation_pattern();
  return out;
}

LossAndGrad ce_loss_and_grad(const EncoderParams &params, const Batch &batch) {
  require_head(params);
  check_batch(batch, params.num_classes);
  const int n = static_cast<int>(batch.images.size());

  Network net(params);
  const Mat &raw = net.forward(batch.images);
  const auto &head = net.head_slice();
  const Mat logits = logits_from_raw(params, head, raw);

  LossAndGrad out;
  Mat d_logits(logits.rows(), logits.cols());
  for (int b = 0; b < n; ++b) {
    const double top = logits.col(b).maxCoeff();
    const Eigen::VectorXd e = (logits.col(b).array() - top).exp();
    const double total = e.sum();
    out.loss += std::log(total) - (logits(batch.labels[b], b) - top);
    d_logits.col(b) = e / total;
    d_logits(batch.labels[b], b) -= 1.0;
  }
  out.loss /= n;
  d_logits /= n;

  out.grads.assign(params.weights.size(), 0.0);
  const Mat mu = raw.topRows(params.embedding_dim);
  const Mat d_head = d_logits * mu.transpose();
  RowMap(out.grads.data() + head.weight_offset, head.rows, head.cols) = d_head;
  const Eigen::VectorXd d_head_bias = d_logits.rowwise().sum();
  VecMap(out.grads.data() + head.bias_offset, head.rows) = d_head_bias;

  Mat d_raw = Mat::Zero(raw.rows(), raw.cols());
  d_raw.topRows(params.embedding_dim) =
      owned(params.weights.data() + head.weight_offset, head.rows, head.cols).transpose() *
      d_logits;
  net.backward(d_raw, out.grads);
  out.activation_pattern = net.activation_pattern();
  return out;
}

EncoderParams adam_step(EncoderParams params, std::span<const double> grads, double lr,
                        const AdamHyper &hyper) {
  const std::size_t n = params.weights.size();
  if (grads.size() != n || params.opt.m.size() != n || params.opt.v.size() != n)
    throw DimensionError("gradient length " + std::to_string(grads.size()) +
                         " does not match " + std::to_string(n) + " parameters");
  auto &opt = params.opt;
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    opt.m[i] = hyper.beta1 * opt.m[i] + (1.0 - hyper.beta1) * grads[i];
    opt.v[i] = hyper.beta2 * opt.v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
    const double m_hat = opt.m[i] / correction1;
    const double v_hat = opt.v[i] / correction2;
    params.weights[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
  return params;
}

double finite_diff_check(const EncoderParams &params, const LossFunction &loss, double h) {
  const auto analytic = loss(params).grads;
  EncoderParams probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.weights.size(); ++i) {
    const double original = probe.weights[i];
    double step = h;
    double numeric = 0.0;
    for (int refine = 0; refine <= kGradCheckRefinements; ++refine, step /= 10.0) {
      probe.weights[i] = original + step;
      const auto up = loss(probe);
      probe.weights[i] = original - step;
      const auto down = loss(probe);
      numeric = (up.loss - down.loss) / (2.0 * step);
      if (up.activation_pattern == down.activation_pattern)
        break;
    }
    probe.weights[i] = original;
    const double scale =
        std::max({std::abs(analytic[i]), std::abs(numeric), kGradCheckFloor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

double finite_diff_check(const EncoderParams &params, const Batch &batch,
                         const PrototypeDistribution &proto, double h) {
  return finite_diff_check(
      params, [&](const EncoderParams &p) { return ddt_loss_and_grad(p, batch, proto); }, h);
}

} // namespace ddt
