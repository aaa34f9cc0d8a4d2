#pragma once

#include "comodal/types.hpp"

#include <compare>
#include <optional>
#include <span>
#include <vector>

namespace comodal {

struct PixelIndex {
  int row = 0;
  int col = 0;
  auto operator<=>(const PixelIndex&) const = default;
};

/// Pinhole camera. Camera frame: x right, y down, z forward.
struct CameraIntrinsics {
  double focal = 40.0;
  double cx = 31.5;
  double cy = 31.5;
  int height = 64;
  int width = 64;

  /// Throws ConfigError unless focal > 0 and the principal point lies inside the image.
  void validate() const;
};

/// Projects a camera-frame point to its nearest pixel. Returns nullopt for
/// non-positive depth or when the projection falls more than half a pixel
/// outside the image.
std::optional<PixelIndex> project_point(const Vec3& point, const CameraIntrinsics& camera);

/// Gathers map values at each point's pixel (the sampling function). Row i of
/// the result is the K-vector stored at pixels[i]. Nearest-pixel, no
/// interpolation.
Matrix sample_at_points(const PixelMap& map, std::span<const PixelIndex> pixels);

/// Integer variant of `sample_at_points` for single-channel label maps.
std::vector<int> sample_labels(const LabelMap& labels, std::span<const PixelIndex> pixels);

/// Adjoint of `sample_at_points`: accumulates per-point rows into an
/// H x W x K map. Pixels hit by several points receive the sum.
PixelMap scatter_gradient(const Matrix& point_grads, std::span<const PixelIndex> pixels,
                          int height, int width);

/// Sorted list of distinct pixels referenced by `pixels`.
std::vector<PixelIndex> unique_pixels(std::span<const PixelIndex> pixels);

/// Writes row r of `rows` into the map at `pixels[r]`; other pixels stay zero.
PixelMap rows_to_map(const Matrix& rows, std::span<const PixelIndex> pixels, int height,
                     int width);

/// Reads the map at each of `pixels` into consecutive rows.
inline Matrix map_to_rows(const PixelMap& map, std::span<const PixelIndex> pixels) {
  return sample_at_points(map, pixels);
}

}  // namespace comodal
