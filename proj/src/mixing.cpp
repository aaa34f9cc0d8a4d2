#include "comodal/mixing.hpp"

#include "comodal/errors.hpp"
#include "comodal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace comodal {

int MixMask::ones() const {
  return static_cast<int>(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{1}));
}

MixMask make_region_mask(int height, int width, std::uint64_t seed, AreaRange area) {
  if (!(area.lo > 0.0 && area.lo <= area.hi && area.hi < 1.0)) {
    throw ConfigError("region mask area range must satisfy 0 < lo <= hi < 1");
  }
  if (height <= 0 || width <= 0) throw ConfigError("region mask needs a positive size");
  Rng rng = make_rng(seed, 0x6d61736b);
  const double total = static_cast<double>(height) * width;
  int h = 0;
  int w = 0;
  // Degenerate rectangles are redrawn; the clamps make that unreachable in practice.
  while (h * w == 0) {
    const double target = uniform(rng, area.lo, area.hi) * total;
    const double aspect = std::exp(uniform(rng, std::log(0.5), std::log(2.0)));
    h = std::clamp(static_cast<int>(std::lround(std::sqrt(target * aspect))), 1, height);
    w = static_cast<int>(std::lround(target / h));
    if (w > width) {
      w = width;
      h = std::clamp(static_cast<int>(std::lround(target / w)), 1, height);
    }
    w = std::clamp(w, 0, width);
  }
  const int top = uniform_index(rng, height - h + 1);
  const int left = uniform_index(rng, width - w + 1);
  MixMask m{Grid<std::uint8_t>(height, width, 1, 0), MaskKind::region};
  for (int r = top; r < top + h; ++r)
    for (int c = left; c < left + w; ++c) m.mask.at(r, c) = 1;
  return m;
}

MixMask make_class_mask(const LabelMap& source_labels, const std::vector<int>& chosen_classes) {
  if (chosen_classes.empty()) throw ConfigError("class mask needs at least one chosen class");
  MixMask m{Grid<std::uint8_t>(source_labels.height, source_labels.width, 1, 0),
            MaskKind::class_level};
  for (std::size_t i = 0; i < source_labels.data.size(); ++i) {
    const int label = source_labels.data[i];
    const bool chosen =
        std::find(chosen_classes.begin(), chosen_classes.end(), label) != chosen_classes.end();
    m.mask.data[i] = chosen ? 1 : 0;
  }
  if (m.ones() == 0) throw EmptyMaskError("none of the chosen classes occurs in the source labels");
  return m;
}

std::vector<int> choose_mix_classes(const LabelMap& source_labels, Rng& rng) {
  std::vector<int> present(source_labels.data.begin(), source_labels.data.end());
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (present.empty()) throw EmptyMaskError("source label map is empty");
  const int n = std::max<int>(1, static_cast<int>(present.size()) / 2);
  // Partial Fisher-Yates.
  for (int i = 0; i < n; ++i) {
    const int j = i + uniform_index(rng, static_cast<int>(present.size()) - i);
    std::swap(present[i], present[j]);
  }
  present.resize(n);
  std::sort(present.begin(), present.end());
  return present;
}

MixedImageSample cutmix_images(const SourceSample& source, const TargetScene& target,
                               const MixMask& mask) {
  return cutmix_images(source, target, mask, target.pixel_of_point());
}

MixedImageSample cutmix_images(const SourceSample& source, const TargetScene& target,
                               const MixMask& mask, std::span<const PixelIndex> point_pixels) {
  const Image& xs = source.image;
  const Image& xt = target.image();
  if (!xs.same_shape(xt) || source.labels.height != xs.height ||
      source.labels.width != xs.width || mask.mask.height != xs.height ||
      mask.mask.width != xs.width) {
    throw ConfigError("cutmix_images: source, target and mask shapes differ");
  }
  MixedImageSample out;
  out.image = Image(xs.height, xs.width, xs.channels);
  for (int r = 0; r < xs.height; ++r) {
    for (int c = 0; c < xs.width; ++c) {
      const double m = mask.mask.at(r, c);
      for (int k = 0; k < xs.channels; ++k) {
        out.image.at(r, c, k) = m * xs.at(r, c, k) + (1.0 - m) * xt.at(r, c, k);
      }
    }
  }
  out.mask = mask;
  out.pixel_of_point.assign(point_pixels.begin(), point_pixels.end());
  out.source_labels_at_points = sample_labels(source.labels, point_pixels);
  out.mask_at_points.resize(point_pixels.size());
  for (std::size_t i = 0; i < point_pixels.size(); ++i) {
    out.mask_at_points[i] = mask.mask.at(point_pixels[i].row, point_pixels[i].col);
  }
  out.parent_target = &target;
  return out;
}

MixedCloudSample mix_pointclouds(const Matrix& points_i, std::span<const int> labels_i,
                                 const Matrix& points_j, std::span<const int> labels_j) {
  if (static_cast<std::size_t>(points_i.rows()) != labels_i.size() ||
      static_cast<std::size_t>(points_j.rows()) != labels_j.size()) {
    throw ContractError("mix_pointclouds: label count does not match point count");
  }
  if (points_i.cols() != points_j.cols()) throw ContractError("mix_pointclouds: column mismatch");
  MixedCloudSample out;
  out.points.resize(points_i.rows() + points_j.rows(), points_i.cols());
  out.points.topRows(points_i.rows()) = points_i;
  out.points.bottomRows(points_j.rows()) = points_j;
  out.labels.assign(labels_i.begin(), labels_i.end());
  out.labels.insert(out.labels.end(), labels_j.begin(), labels_j.end());
  out.boundary = static_cast<int>(points_i.rows());
  return out;
}

MixedCloudSample mix_pointclouds(const TargetScene& scene_i, std::span<const int> labels_i,
                                 const TargetScene& scene_j, std::span<const int> labels_j) {
  return mix_pointclouds(scene_i.points(), labels_i, scene_j.points(), labels_j);
}

std::vector<int> pair_batch(int batch_size, Rng& rng) {
  if (batch_size < 2) {
    throw ConfigError("pair_batch needs a batch of at least 2, got " + std::to_string(batch_size));
  }
  std::vector<int> partner(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    const int k = uniform_index(rng, batch_size - 1);
    partner[i] = k < i ? k : k + 1;
  }
  return partner;
}

}  // namespace comodal
