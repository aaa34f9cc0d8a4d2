#include "comodal/eval.hpp"

#include "comodal/errors.hpp"
#include "comodal/eval_access.hpp"
#include "comodal/key_value.hpp"
#include "comodal/losses.hpp"
#include "comodal/pseudo.hpp"

#include <cmath>
#include <numeric>

namespace comodal {

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<std::size_t>(classes) * classes, 0) {
  if (classes < 0) throw ContractError("ConfusionMatrix: negative class count");
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

void ConfusionMatrix::accumulate(std::span<const int> gt, std::span<const int> pred) {
  if (gt.size() != pred.size()) throw ContractError("accumulate: gt and pred lengths differ");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] < 0 || gt[i] >= classes_ || pred[i] < 0 || pred[i] >= classes_) {
      throw ContractError("accumulate: label out of range at element " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) ++counts_[index(gt[i], pred[i])];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ContractError("merge: class counts differ");
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
}

IouReport miou(const ConfusionMatrix& cm) {
  const int c = cm.classes();
  IouReport out;
  out.per_class.resize(c);
  double sum = 0.0;
  int used = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (int j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::int64_t tp = cm.at(k, k);
    const std::int64_t denom = row + col - tp;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    out.per_class[k] = iou;
    sum += iou;
    ++used;
  }
  if (used == 0) throw UndefinedMetricError("miou: no class present in ground truth or prediction");
  out.mean = sum / used;
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw UndefinedMetricError("accuracy: empty confusion matrix");
  std::int64_t diag = 0;
  for (int k = 0; k < cm.classes(); ++k) diag += cm.at(k, k);
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::vector<int> ensemble_labels(const Matrix& logits_a, const Matrix& logits_b) {
  if (logits_a.rows() != logits_b.rows() || logits_a.cols() != logits_b.cols()) {
    throw ContractError("ensemble_labels: logits shapes differ");
  }
  const Matrix mean = 0.5 * (softmax(logits_a) + softmax(logits_b));
  std::vector<int> out(static_cast<std::size_t>(mean.rows()));
  for (Eigen::Index i = 0; i < mean.rows(); ++i) {
    Eigen::Index best = 0;
    mean.row(i).maxCoeff(&best);
    out[i] = static_cast<int>(best);
  }
  return out;
}

ScenePredictions predict_scene(const NetParams& net2d, const NetParams& net3d,
                               const TargetScene& scene) {
  ScenePredictions out;
  const auto& pix = scene.pixel_of_point();
  const auto unique = unique_pixels(pix);
  const Matrix rows = forward(net2d, features_2d_at(scene.image(), unique)).logits_cls;
  out.logits_2d = sample_at_points(rows_to_map(rows, unique, scene.height(), scene.width()), pix);
  out.logits_3d = forward(net3d, features_3d(scene.points())).logits_cls;
  return out;
}

TriadReport evaluate_triads(const NetParams& net2d, const NetParams& net3d,
                            const NetParams* teacher, std::span<const TargetScene> scenes) {
  const int c = net3d.shape().classes;
  if (net2d.shape().classes != c) throw ContractError("evaluate_triads: class counts differ");
  TriadReport report{ConfusionMatrix(c), ConfusionMatrix(c), ConfusionMatrix(c), std::nullopt};
  if (teacher) report.cm_teacher = ConfusionMatrix(c);
  for (const auto& scene : scenes) {
    const auto& gt = scene.ground_truth(EvalAccess::key()).point_labels;
    const ScenePredictions pred = predict_scene(net2d, net3d, scene);
    report.cm_2d.accumulate(gt, argmax_labels(pred.logits_2d).labels);
    report.cm_3d.accumulate(gt, argmax_labels(pred.logits_3d).labels);
    report.cm_avg.accumulate(gt, ensemble_labels(pred.logits_2d, pred.logits_3d));
    if (teacher) {
      const Matrix t = forward(*teacher, features_3d(scene.points())).logits_cls;
      report.cm_teacher->accumulate(gt, argmax_labels(t).labels);
    }
  }
  return report;
}

ConfusionMatrix evaluate_3d(const NetParams& net3d, std::span<const TargetScene> scenes) {
  ConfusionMatrix cm(net3d.shape().classes);
  for (const auto& scene : scenes) {
    const auto& gt = scene.ground_truth(EvalAccess::key()).point_labels;
    const Matrix logits = forward(net3d, features_3d(scene.points())).logits_cls;
    cm.accumulate(gt, argmax_labels(logits).labels);
  }
  return cm;
}

ConfusionMatrix evaluate_2d_pixels(const NetParams& net2d, std::span<const SourceSample> samples) {
  ConfusionMatrix cm(net2d.shape().classes);
  for (const auto& s : samples) {
    const Matrix logits = forward(net2d, features_2d(s.image)).logits_cls;
    cm.accumulate(s.labels.data, argmax_labels(logits).labels);
  }
  return cm;
}

namespace {

std::string report_row(const std::string& name, const ConfusionMatrix& cm) {
  const IouReport r = miou(cm);
  std::string line = name;
  for (const auto& v : r.per_class) line += "," + (v ? format_double(*v) : std::string("nan"));
  return line + "," + format_double(r.mean) + "\n";
}

}  // namespace

std::string eval_report_csv(const TriadReport& report, const std::vector<std::string>& class_names) {
  if (static_cast<int>(class_names.size()) != report.cm_3d.classes()) {
    throw ContractError("eval_report_csv: class name count does not match");
  }
  std::string out = "metric";
  for (const auto& n : class_names) out += "," + n;
  out += ",miou\n";
  out += report_row("2d", report.cm_2d);
  out += report_row("3d", report.cm_3d);
  out += report_row("avg", report.cm_avg);
  if (report.cm_teacher) out += report_row("teacher_3d", *report.cm_teacher);
  return out;
}

std::vector<Vec3> class_palette(int classes) {
  static const std::vector<Vec3> base = {
      {0.50, 0.25, 0.50}, {0.96, 0.14, 0.91}, {0.42, 0.56, 0.14}, {0.00, 0.00, 0.56},
      {0.27, 0.27, 0.27}, {0.98, 0.67, 0.12}, {0.86, 0.08, 0.24}, {0.40, 0.40, 0.61},
      {0.60, 0.98, 0.60}, {0.27, 0.51, 0.71}, {0.86, 0.86, 0.00}, {1.00, 1.00, 1.00},
  };
  std::vector<Vec3> out;
  for (int k = 0; k < classes; ++k) {
    if (k < static_cast<int>(base.size())) {
      out.push_back(base[k]);
    } else {
      const double h = std::fmod(0.618033988749895 * k, 1.0);
      out.push_back({0.5 + 0.5 * std::cos(6.283185307179586 * h),
                     0.5 + 0.5 * std::cos(6.283185307179586 * (h + 1.0 / 3)),
                     0.5 + 0.5 * std::cos(6.283185307179586 * (h + 2.0 / 3))});
    }
  }
  return out;
}

Image render_label_map(const LabelMap& labels, const std::vector<Vec3>& palette) {
  Image out(labels.height, labels.width, 3);
  for (int r = 0; r < labels.height; ++r) {
    for (int c = 0; c < labels.width; ++c) {
      const int l = labels.at(r, c);
      if (l < 0 || l >= static_cast<int>(palette.size())) {
        throw ContractError("render_label_map: palette does not cover label " + std::to_string(l));
      }
      for (int k = 0; k < 3; ++k) out.at(r, c, k) = palette[l][k];
    }
  }
  return out;
}

Image render_point_labels(std::span<const int> labels, std::span<const PixelIndex> pixels, int height,
                          int width, const std::vector<Vec3>& palette) {
  if (labels.size() != pixels.size()) throw ContractError("render_point_labels: length mismatch");
  Image out(height, width, 3, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || l >= static_cast<int>(palette.size())) {
      throw ContractError("render_point_labels: palette does not cover label " + std::to_string(l));
    }
    const auto& p = pixels[i];
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width) {
      throw IndexError("render_point_labels: point " + std::to_string(i) + " outside the image");
    }
    for (int k = 0; k < 3; ++k) out.at(p.row, p.col, k) = palette[l][k];
  }
  return out;
}

}  // namespace comodal
