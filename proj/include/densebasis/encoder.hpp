#pragma once

// Small trainable encoders (linear, or one tanh hidden layer) with manual
// backpropagation and a binary checkpoint format.

#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "densebasis/matrix_io.hpp"

namespace densebasis {

enum class EncoderKind : std::uint8_t { linear = 0, tanh_mlp = 1 };

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "linear") return EncoderKind::linear;
  if (s == "tanh_mlp" || s == "mlp") return EncoderKind::tanh_mlp;
  throw InvalidInput("unknown encoder kind '" + s + "' (expected linear or tanh_mlp)");
}

inline const char* encoder_kind_name(EncoderKind k) { return k == EncoderKind::linear ? "linear" : "tanh_mlp"; }

// y = x W + b, W is fan_in x fan_out.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

struct EncoderShape {
  EncoderKind kind = EncoderKind::tanh_mlp;
  Index input_dim = 0;
  Index hidden_dim = 0;  // ignored (0) for linear
  Index output_dim = 0;
};

class Encoder {
 public:
  Encoder() = default;

  explicit Encoder(const EncoderShape& shape) : kind_(shape.kind) {
    require(shape.input_dim >= 1 && shape.output_dim >= 1, "encoder dims must be >= 1");
    if (kind_ == EncoderKind::linear) {
      layers_.push_back(zero_layer(shape.input_dim, shape.output_dim));
    } else {
      require(shape.hidden_dim >= 1, "tanh_mlp encoder needs hidden_dim >= 1");
      layers_.push_back(zero_layer(shape.input_dim, shape.hidden_dim));
      layers_.push_back(zero_layer(shape.hidden_dim, shape.output_dim));
    }
  }

  /// Uniform [-a, a] weights and biases with a = 1/sqrt(fan_in).
  static Encoder initialized(const EncoderShape& shape, std::uint64_t seed) {
    Encoder enc(shape);
    std::mt19937_64 rng(seed);
    for (auto& layer : enc.layers_) {
      const double a = 1.0 / std::sqrt(static_cast<double>(layer.weight.rows()));
      std::uniform_real_distribution<double> u(-a, a);
      for (Index j = 0; j < layer.weight.cols(); ++j)
        for (Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = u(rng);
      for (Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = u(rng);
    }
    return enc;
  }

  EncoderKind kind() const noexcept { return kind_; }
  Index input_dim() const { return layers_.front().weight.rows(); }
  Index hidden_dim() const { return kind_ == EncoderKind::linear ? 0 : layers_.front().weight.cols(); }
  Index output_dim() const { return layers_.back().weight.cols(); }
  EncoderShape shape() const { return {kind_, input_dim(), hidden_dim(), output_dim()}; }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  /// Flattened as [W1 (column-major), b1, W2, b2].
  Vector parameters() const {
    Vector theta(parameter_count());
    Index at = 0;
    for (const auto& l : layers_) {
      theta.segment(at, l.weight.size()) = l.weight.reshaped();
      at += l.weight.size();
      theta.segment(at, l.bias.size()) = l.bias;
      at += l.bias.size();
    }
    return theta;
  }

  void set_parameters(const Vector& theta) {
    require(theta.size() == parameter_count(), "set_parameters: size mismatch");
    Index at = 0;
    for (auto& l : layers_) {
      l.weight.reshaped() = theta.segment(at, l.weight.size());
      at += l.weight.size();
      l.bias = theta.segment(at, l.bias.size());
      at += l.bias.size();
    }
  }

 private:
  static DenseLayer zero_layer(Index in, Index out) { return {Matrix::Zero(in, out), Vector::Zero(out)}; }

  EncoderKind kind_ = EncoderKind::linear;
  std::vector<DenseLayer> layers_;
};

namespace detail {

inline Matrix affine(const DenseLayer& l, const Matrix& x) { return (x * l.weight).rowwise() + l.bias.transpose(); }

}  // namespace detail

inline Matrix forward(const Encoder& enc, const Matrix& x) {
  require(x.cols() == enc.input_dim(), "forward: input has " + std::to_string(x.cols()) + " columns, encoder expects " +
                                           std::to_string(enc.input_dim()));
  if (enc.kind() == EncoderKind::linear) return detail::affine(enc.layers()[0], x);
  const Matrix hidden = detail::affine(enc.layers()[0], x).array().tanh().matrix();
  return detail::affine(enc.layers()[1], hidden);
}

/// Parameter gradients laid out like Encoder::parameters().
inline Vector backward(const Encoder& enc, const Matrix& x, const Matrix& d_out) {
  require(x.cols() == enc.input_dim(), "backward: input width mismatch");
  require(d_out.rows() == x.rows() && d_out.cols() == enc.output_dim(),
          "backward: gradient shape " + shape_str(d_out) + " does not match output");
  Vector grad(enc.parameter_count());
  const auto& layers = enc.layers();
  if (enc.kind() == EncoderKind::linear) {
    const Index nw = layers[0].weight.size();
    grad.head(nw) = (x.transpose() * d_out).reshaped();
    grad.segment(nw, d_out.cols()) = d_out.colwise().sum().transpose();
    return grad;
  }
  const Matrix hidden = detail::affine(layers[0], x).array().tanh().matrix();
  const Matrix d_hidden = d_out * layers[1].weight.transpose();
  const Matrix d_pre = (d_hidden.array() * (1.0 - hidden.array().square())).matrix();

  Index at = 0;
  const Index nw1 = layers[0].weight.size();
  grad.segment(at, nw1) = (x.transpose() * d_pre).reshaped();
  at += nw1;
  grad.segment(at, d_pre.cols()) = d_pre.colwise().sum().transpose();
  at += d_pre.cols();
  const Index nw2 = layers[1].weight.size();
  grad.segment(at, nw2) = (hidden.transpose() * d_out).reshaped();
  at += nw2;
  grad.segment(at, d_out.cols()) = d_out.colwise().sum().transpose();
  return grad;
}

/// FNV-1a over the parameter bit patterns.
inline std::uint64_t parameter_checksum(const Encoder& enc) {
  std::uint64_t h = 1469598103934665603ULL;
  const Vector theta = enc.parameters();
  for (Index i = 0; i < theta.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(theta[i]);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

// Checkpoint: "DBCK", u16 version, u8 kind, u64 input/hidden/output dims,
// u64 blob count, then each weight and bias (as a 1 x n row) as a DMAT blob.
namespace detail {
constexpr std::array<char, 4> kCheckpointMagic = {'D', 'B', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Encoder& enc) {
  out.write(detail::kCheckpointMagic.data(), 4);
  detail::put_le<std::uint16_t>(out, detail::kCheckpointVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(enc.kind()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(enc.input_dim()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(enc.hidden_dim()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(enc.output_dim()));
  detail::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(2 * enc.layers().size()));
  for (const auto& l : enc.layers()) {
    write_dmat(out, l.weight);
    write_dmat(out, l.bias.transpose());
  }
}

inline Encoder read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (in.gcount() != 4 || magic != detail::kCheckpointMagic) throw FormatError("not a densebasis checkpoint");
  const auto version = detail::get_le<std::uint16_t>(in, "checkpoint version");
  if (version != detail::kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto kind_tag = detail::get_le<std::uint8_t>(in, "encoder kind");
  if (kind_tag > 1) throw FormatError("unknown encoder kind tag " + std::to_string(kind_tag));
  EncoderShape shape;
  shape.kind = static_cast<EncoderKind>(kind_tag);
  shape.input_dim = static_cast<Index>(detail::get_le<std::uint64_t>(in, "input dim"));
  shape.hidden_dim = static_cast<Index>(detail::get_le<std::uint64_t>(in, "hidden dim"));
  shape.output_dim = static_cast<Index>(detail::get_le<std::uint64_t>(in, "output dim"));
  const auto blobs = detail::get_le<std::uint64_t>(in, "blob count");
  Encoder enc;
  try {
    enc = Encoder(shape);
  } catch (const InvalidInput& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (blobs != 2 * enc.layers().size()) throw FormatError("checkpoint blob count does not match encoder kind");
  for (auto& l : enc.layers()) {
    Matrix w = read_dmat(in);
    Matrix b = read_dmat(in);
    if (w.rows() != l.weight.rows() || w.cols() != l.weight.cols() || b.rows() != 1 || b.cols() != l.bias.size())
      throw FormatError("checkpoint parameter shape does not match header");
    if (!w.allFinite() || !b.allFinite()) throw FormatError("checkpoint contains non-finite parameters");
    l.weight = std::move(w);
    l.bias = b.transpose();
  }
  return enc;
}

inline void save_checkpoint(const std::string& path, const Encoder& enc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  write_checkpoint(out, enc);
}

inline Encoder load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  Encoder enc = read_checkpoint(in);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint has trailing bytes");
  return enc;
}

}  // namespace densebasis
