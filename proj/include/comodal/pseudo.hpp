#pragma once

#include "comodal/mixing.hpp"
#include "comodal/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace comodal {

enum class Provenance : std::uint8_t { online, pretrained, teacher };

struct PointPseudoLabels {
  std::vector<int> labels;
  /// Max softmax probability of the producing model.
  std::vector<double> confidence;
  std::vector<Provenance> provenance;

  int size() const { return static_cast<int>(labels.size()); }
  /// Fraction of points whose label came from `p`.
  double fraction(Provenance p) const;
};

/// Per-row argmax (lowest index wins ties) and max softmax probability.
/// Throws NumericError on non-finite input.
PointPseudoLabels argmax_labels(const Matrix& logits, Provenance provenance = Provenance::online);

/// Per point, the online label when its confidence is at least the
/// pretrained one, otherwise the pretrained label.
PointPseudoLabels hybrid_fuse(const PointPseudoLabels& online, const PointPseudoLabels& pretrained);

struct ClassPrototypes {
  /// Row c is the mean logit vector of points labeled c (zero when absent).
  Matrix values;
  std::vector<int> support;

  int num_classes() const { return static_cast<int>(support.size()); }
  bool present(int c) const { return support[c] > 0; }
};

/// Mean pre-softmax logit row per pseudo-label class.
ClassPrototypes class_prototypes(const Matrix& point_logits, std::span<const int> labels);
inline ClassPrototypes class_prototypes(const Matrix& point_logits,
                                        const PointPseudoLabels& pseudo) {
  return class_prototypes(point_logits, pseudo.labels);
}

/// Exponential smoothing of prototypes across iterations. Classes absent in
/// the new batch keep their previous value.
class PrototypeSmoother {
 public:
  explicit PrototypeSmoother(double decay) : decay_(decay) {}
  const ClassPrototypes& update(const ClassPrototypes& current);
  const ClassPrototypes& current() const { return state_; }

 private:
  double decay_;
  ClassPrototypes state_;
  bool initialized_ = false;
};

struct AlignmentTargets {
  Matrix targets;
  /// 1 where the row participates in the mixed-image distillation loss.
  std::vector<std::uint8_t> valid;

  int valid_count() const;
};

/// Per sampled point: mask 1 -> prototype of the source label at that pixel
/// (invalid when that prototype is absent); mask 0 -> the point's own 3D logits.
AlignmentTargets assemble_alignment_targets(const ClassPrototypes& prototypes,
                                            const Matrix& point_logits,
                                            const MixedImageSample& mixed);

/// Prototype targets for an explicit list of source-region pixels, used by
/// the `random` and `all` source-pixel selections.
AlignmentTargets prototype_targets(const ClassPrototypes& prototypes,
                                   std::span<const int> source_labels);

}  // namespace comodal
