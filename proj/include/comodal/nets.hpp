#pragma once

#include "comodal/geometry.hpp"
#include "comodal/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace comodal {

inline constexpr int kImageFeatures = 27;  // 3x3 RGB neighborhood
inline constexpr int kPointFeatures = 7;   // xyz, range, unit direction

enum class NetKind { image, point };

struct NetShape {
  int inputs = 0;
  int hidden = 0;
  int classes = 0;
  bool operator==(const NetShape&) const = default;
};

/// Two-layer rectifier trunk with a classifier head and a mimicry head:
///   a1 = relu(x W1 + b1), a2 = relu(a1 W2 + b2),
///   cls = a2 Wc + bc,     mim = a2 Wm + bm.
/// Weights are (in x out); biases are 1 x out.
struct NetParams {
  NetKind kind = NetKind::point;
  Matrix w1, b1, w2, b2, w_cls, b_cls, w_mim, b_mim;

  static constexpr int kTensors = 8;
  std::array<Matrix*, kTensors> tensors() {
    return {&w1, &b1, &w2, &b2, &w_cls, &b_cls, &w_mim, &b_mim};
  }
  std::array<const Matrix*, kTensors> tensors() const {
    return {&w1, &b1, &w2, &b2, &w_cls, &b_cls, &w_mim, &b_mim};
  }
  static const char* tensor_name(int i);

  NetShape shape() const;
  bool same_shape(const NetParams& other) const;
  /// Zero-valued parameters of the same shape.
  NetParams zeros_like() const;
  /// FNV-1a over the raw parameter bytes; used to detect mutation.
  std::uint64_t hash() const;
  bool operator==(const NetParams& other) const;
};

using Net2DParams = NetParams;
using Net3DParams = NetParams;

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
NetParams init_net(NetKind kind, NetShape shape, Rng& rng);

/// Per pixel, the 3x3 RGB neighborhood with edge replication, flattened in
/// (dr, dc, channel) order: H*W rows of 27 features.
Matrix features_2d(const Image& image);
/// Same features for selected pixels only.
Matrix features_2d_at(const Image& image, std::span<const PixelIndex> pixels);

/// Per point (x, y, z, r, x/r, y/r, z/r) with r the Euclidean norm. Throws
/// NumericError on a zero-range point.
Matrix features_3d(const Matrix& points);

struct ForwardCache {
  Matrix input;
  Matrix hidden1;  // post-rectifier
  Matrix hidden2;  // post-rectifier
};

struct ForwardResult {
  Matrix logits_cls;
  Matrix logits_mim;
  ForwardCache cache;
};

/// Throws NumericError if any output is non-finite.
ForwardResult forward(const NetParams& params, const Matrix& features);

struct BackwardResult {
  NetParams grads;
  Matrix input_grad;
};

/// Exact gradients of sum(grad_cls .* cls) + sum(grad_mim .* mim). The
/// rectifier derivative at 0 is taken as 0. Either upstream gradient may be
/// empty (0 rows), meaning zero.
BackwardResult backward(const NetParams& params, const ForwardCache& cache,
                        const Matrix& grad_cls, const Matrix& grad_mim);

/// EMA copy of the 3D network. Only `ema_update` changes it.
struct TeacherState {
  NetParams params;
  double decay = 0.99;
};

/// theta_t <- decay * theta_t + (1 - decay) * theta_s, elementwise.
void ema_update(TeacherState& teacher, const NetParams& student);

/// Rounds every parameter to float32 precision, the snapshot storage format.
void round_to_float(NetParams& params);

/// Text header (magic, kind, config hash, tensor shapes) followed by
/// little-endian float32 data in header order.
std::string encode_snapshot(const NetParams& params, std::uint64_t config_hash);
NetParams decode_snapshot(const std::string& bytes, std::uint64_t* config_hash = nullptr);
void save_snapshot(const std::filesystem::path& path, const NetParams& params,
                   std::uint64_t config_hash);
NetParams load_snapshot(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr);

}  // namespace comodal
