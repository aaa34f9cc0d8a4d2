#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace comodal {

/// Dense row-major matrix; rows are samples (pixels or points), columns are
/// channels (features or classes).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec3 = Eigen::Vector3d;
using Rng = std::mt19937_64;

/// H x W x K grid stored row-major with interleaved channels.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, int k, T fill = T{})
      : height(h), width(w), channels(k), data(static_cast<std::size_t>(h) * w * k, fill) {}

  std::size_t index(int row, int col, int ch = 0) const {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  T& at(int row, int col, int ch = 0) { return data[index(row, col, ch)]; }
  const T& at(int row, int col, int ch = 0) const { return data[index(row, col, ch)]; }
  int pixels() const { return height * width; }
  bool same_shape(const Grid& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
  bool operator==(const Grid&) const = default;
};

/// RGB image with values in [0,1].
using Image = Grid<double>;
/// Per-pixel class ids.
using LabelMap = Grid<int>;
/// Arbitrary per-pixel real-valued map (features, logits, gradients).
using PixelMap = Grid<double>;

/// Deterministic generator for a (seed, stream, index) triple so that pure
/// per-item generation does not depend on iteration order.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

/// Uniform real in [lo, hi). Implemented directly on the engine output so
/// results do not depend on the standard library's distribution internals.
inline double uniform(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Uniform integer in [0, n).
inline int uniform_index(Rng& rng, int n) {
  return static_cast<int>(uniform(rng, 0.0, static_cast<double>(n)));
}

}  // namespace comodal
