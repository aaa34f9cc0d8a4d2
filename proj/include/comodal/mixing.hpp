#pragma once

#include "comodal/scene_synth.hpp"
#include "comodal/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace comodal {

enum class MaskKind { region, class_level };

/// Binary CutMix mask; 1 marks pixels copied from the source image.
struct MixMask {
  Grid<std::uint8_t> mask;
  MaskKind kind = MaskKind::region;

  int ones() const;
};

struct AreaRange {
  double lo = 0.2;
  double hi = 0.5;
};

/// One axis-aligned rectangle, uniformly placed, whose area fraction is
/// uniform in [lo, hi]. Requires 0 < lo <= hi < 1.
MixMask make_region_mask(int height, int width, std::uint64_t seed, AreaRange area);

/// Mask equal to 1 exactly where the source label is in `chosen_classes`.
/// Throws EmptyMaskError when none of the chosen classes occurs.
MixMask make_class_mask(const LabelMap& source_labels, const std::vector<int>& chosen_classes);

/// Default class selection: half (rounded down, at least one) of the classes
/// present in the label map, drawn uniformly without replacement.
std::vector<int> choose_mix_classes(const LabelMap& source_labels, Rng& rng);

struct MixedImageSample {
  Image image;
  MixMask mask;
  /// Source label at each target point's pixel.
  std::vector<int> source_labels_at_points;
  /// Mask value at each target point's pixel.
  std::vector<std::uint8_t> mask_at_points;
  /// Pixel of each target point (taken from the parent scene or a subset of it).
  std::vector<PixelIndex> pixel_of_point;
  const TargetScene* parent_target = nullptr;
};

/// mixed = mask * source + (1 - mask) * target, pixelwise, with per-point
/// source labels and mask values gathered at the target scene's points.
MixedImageSample cutmix_images(const SourceSample& source, const TargetScene& target,
                               const MixMask& mask);

/// Same composition restricted to a subset of the target points, given by
/// their pixels.
MixedImageSample cutmix_images(const SourceSample& source, const TargetScene& target,
                               const MixMask& mask, std::span<const PixelIndex> point_pixels);

struct MixedCloudSample {
  Matrix points;
  std::vector<int> labels;
  /// Number of leading points taken from the first cloud.
  int boundary = 0;
};

/// Concatenates cloud i and cloud j (in that order) with their labels.
MixedCloudSample mix_pointclouds(const Matrix& points_i, std::span<const int> labels_i,
                                 const Matrix& points_j, std::span<const int> labels_j);

MixedCloudSample mix_pointclouds(const TargetScene& scene_i, std::span<const int> labels_i,
                                 const TargetScene& scene_j, std::span<const int> labels_j);

/// For each batch slot i, a partner index drawn uniformly from the other
/// B - 1 slots. Requires B >= 2.
std::vector<int> pair_batch(int batch_size, Rng& rng);

}  // namespace comodal
