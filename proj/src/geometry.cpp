#include "comodal/geometry.hpp"

#include "comodal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace comodal {

void CameraIntrinsics::validate() const {
  if (!(focal > 0.0)) throw ConfigError("camera focal length must be positive");
  if (height <= 0 || width <= 0) throw ConfigError("camera image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw ConfigError("camera principal point must lie inside the image");
  }
}

std::optional<PixelIndex> project_point(const Vec3& point, const CameraIntrinsics& camera) {
  if (!(point.z() > 0.0)) return std::nullopt;
  const double u = camera.focal * point.x() / point.z() + camera.cx;
  const double v = camera.focal * point.y() / point.z() + camera.cy;
  // Within half a pixel of the border still rounds onto the edge pixel.
  if (!(u >= -0.5 && u < camera.width - 0.5 && v >= -0.5 && v < camera.height - 0.5)) {
    return std::nullopt;
  }
  const int col = std::clamp(static_cast<int>(std::lround(u)), 0, camera.width - 1);
  const int row = std::clamp(static_cast<int>(std::lround(v)), 0, camera.height - 1);
  return PixelIndex{row, col};
}

namespace {

void check_index(const PixelIndex& p, std::size_t i, int height, int width) {
  if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
    throw IndexError("point " + std::to_string(i) + " maps to pixel (" + std::to_string(p.row) +
                     ", " + std::to_string(p.col) + ") outside " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
}

}  // namespace

Matrix sample_at_points(const PixelMap& map, std::span<const PixelIndex> pixels) {
  Matrix out(static_cast<Eigen::Index>(pixels.size()), map.channels);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    check_index(pixels[i], i, map.height, map.width);
    const double* src = &map.data[map.index(pixels[i].row, pixels[i].col)];
    for (int k = 0; k < map.channels; ++k) out(static_cast<Eigen::Index>(i), k) = src[k];
  }
  return out;
}

std::vector<int> sample_labels(const LabelMap& labels, std::span<const PixelIndex> pixels) {
  std::vector<int> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    check_index(pixels[i], i, labels.height, labels.width);
    out[i] = labels.at(pixels[i].row, pixels[i].col);
  }
  return out;
}

PixelMap scatter_gradient(const Matrix& point_grads, std::span<const PixelIndex> pixels,
                          int height, int width) {
  if (static_cast<std::size_t>(point_grads.rows()) != pixels.size()) {
    throw ContractError("scatter_gradient: " + std::to_string(point_grads.rows()) +
                        " gradient rows for " + std::to_string(pixels.size()) + " points");
  }
  const int k = static_cast<int>(point_grads.cols());
  PixelMap out(height, width, k, 0.0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    check_index(pixels[i], i, height, width);
    double* dst = &out.data[out.index(pixels[i].row, pixels[i].col)];
    for (int c = 0; c < k; ++c) dst[c] += point_grads(static_cast<Eigen::Index>(i), c);
  }
  return out;
}

std::vector<PixelIndex> unique_pixels(std::span<const PixelIndex> pixels) {
  std::vector<PixelIndex> out(pixels.begin(), pixels.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PixelMap rows_to_map(const Matrix& rows, std::span<const PixelIndex> pixels, int height,
                     int width) {
  if (static_cast<std::size_t>(rows.rows()) != pixels.size()) {
    throw ContractError("rows_to_map: row count does not match pixel count");
  }
  const int k = static_cast<int>(rows.cols());
  PixelMap out(height, width, k, 0.0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    check_index(pixels[i], i, height, width);
    double* dst = &out.data[out.index(pixels[i].row, pixels[i].col)];
    for (int c = 0; c < k; ++c) dst[c] = rows(static_cast<Eigen::Index>(i), c);
  }
  return out;
}

}  // namespace comodal
