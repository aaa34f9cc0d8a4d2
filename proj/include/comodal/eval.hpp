#pragma once

#include "comodal/geometry.hpp"
#include "comodal/nets.hpp"
#include "comodal/scene_synth.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace comodal {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);

  int classes() const { return classes_; }
  std::int64_t at(int gt, int pred) const { return counts_[index(gt, pred)]; }
  std::int64_t total() const;

  /// Throws ContractError on labels outside [0, C) or length mismatch.
  void accumulate(std::span<const int> gt, std::span<const int> pred);
  /// Adds another matrix of the same size.
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t index(int gt, int pred) const {
    return static_cast<std::size_t>(gt) * classes_ + pred;
  }
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct IouReport {
  /// nullopt for classes absent from both ground truth and prediction.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

/// IoU_c = tp / (row + col - tp), averaged over classes with a non-zero
/// denominator. Throws UndefinedMetricError when every class is absent.
IouReport miou(const ConfusionMatrix& cm);

/// Per-class-summed accuracy: trace / total. Throws UndefinedMetricError on
/// an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// Per point argmax of the mean of the two softmax distributions.
std::vector<int> ensemble_labels(const Matrix& logits_a, const Matrix& logits_b);

/// Per-point predictions of the two networks on one scene: 2D logits are
/// computed at each point's pixel.
struct ScenePredictions {
  Matrix logits_2d;
  Matrix logits_3d;
};
ScenePredictions predict_scene(const NetParams& net2d, const NetParams& net3d,
                               const TargetScene& scene);

struct TriadReport {
  ConfusionMatrix cm_2d;
  ConfusionMatrix cm_3d;
  ConfusionMatrix cm_avg;
  /// Filled when a teacher network is evaluated as well.
  std::optional<ConfusionMatrix> cm_teacher;
};

/// Accumulates 2D, 3D and ensemble confusion matrices over every point of
/// every scene.
TriadReport evaluate_triads(const NetParams& net2d, const NetParams& net3d,
                            const NetParams* teacher, std::span<const TargetScene> scenes);

/// 3D-only confusion matrix over the scenes' points.
ConfusionMatrix evaluate_3d(const NetParams& net3d, std::span<const TargetScene> scenes);

/// Pixel-level confusion matrix of a 2D network on labeled source images.
ConfusionMatrix evaluate_2d_pixels(const NetParams& net2d, std::span<const SourceSample> samples);

/// CSV with a header `metric,<class names>,miou` and one row per available
/// metric (2d, 3d, avg, then teacher_3d when present). Excluded classes are
/// written as `nan`.
std::string eval_report_csv(const TriadReport& report, const std::vector<std::string>& class_names);

/// Distinct display color per class.
std::vector<Vec3> class_palette(int classes);

/// Each pixel colored by its label. Throws ContractError when the palette
/// does not cover a label.
Image render_label_map(const LabelMap& labels, const std::vector<Vec3>& palette);

/// Each point splatted as one pixel on a black background.
Image render_point_labels(std::span<const int> labels, std::span<const PixelIndex> pixels, int height,
                          int width, const std::vector<Vec3>& palette);

}  // namespace comodal
