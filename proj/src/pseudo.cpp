#include "comodal/pseudo.hpp"

#include "comodal/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace comodal {

double PointPseudoLabels::fraction(Provenance p) const {
  if (provenance.empty()) return 0.0;
  return static_cast<double>(std::count(provenance.begin(), provenance.end(), p)) /
         static_cast<double>(provenance.size());
}

PointPseudoLabels argmax_labels(const Matrix& logits, Provenance provenance) {
  if (!logits.allFinite()) throw NumericError("argmax_labels: non-finite logits");
  const auto n = logits.rows();
  PointPseudoLabels out;
  out.labels.resize(n);
  out.confidence.resize(n);
  out.provenance.assign(n, provenance);
  for (Eigen::Index i = 0; i < n; ++i) {
    int best = 0;
    double top = logits(i, 0);
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > top) {
        top = logits(i, c);
        best = static_cast<int>(c);
      }
    }
    double denom = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) denom += std::exp(logits(i, c) - top);
    out.labels[i] = best;
    out.confidence[i] = 1.0 / denom;
  }
  return out;
}

PointPseudoLabels hybrid_fuse(const PointPseudoLabels& online, const PointPseudoLabels& pretrained) {
  if (online.size() != pretrained.size() ||
      online.confidence.size() != online.labels.size() ||
      pretrained.confidence.size() != pretrained.labels.size()) {
    throw ContractError("hybrid_fuse: inputs have different lengths");
  }
  PointPseudoLabels out;
  const int n = online.size();
  out.labels.resize(n);
  out.confidence.resize(n);
  out.provenance.resize(n);
  for (int i = 0; i < n; ++i) {
    const bool take_online = online.confidence[i] >= pretrained.confidence[i];
    const PointPseudoLabels& src = take_online ? online : pretrained;
    out.labels[i] = src.labels[i];
    out.confidence[i] = src.confidence[i];
    out.provenance[i] = take_online ? Provenance::online : Provenance::pretrained;
  }
  return out;
}

ClassPrototypes class_prototypes(const Matrix& point_logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(point_logits.rows()) != labels.size()) {
    throw ContractError("class_prototypes: label count does not match logit rows");
  }
  const auto num_classes = point_logits.cols();
  ClassPrototypes out{Matrix::Zero(num_classes, num_classes),
                      std::vector<int>(static_cast<std::size_t>(num_classes), 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes) throw ContractError("class_prototypes: label out of range");
    out.values.row(c) += point_logits.row(static_cast<Eigen::Index>(i));
    ++out.support[c];
  }
  for (Eigen::Index c = 0; c < num_classes; ++c) {
    if (out.support[c] > 0) out.values.row(c) /= static_cast<double>(out.support[c]);
  }
  return out;
}

const ClassPrototypes& PrototypeSmoother::update(const ClassPrototypes& current) {
  if (!initialized_) {
    state_ = current;
    initialized_ = true;
    return state_;
  }
  for (int c = 0; c < current.num_classes(); ++c) {
    if (!current.present(c)) continue;
    if (state_.present(c)) {
      state_.values.row(c) = decay_ * state_.values.row(c) + (1.0 - decay_) * current.values.row(c);
    } else {
      state_.values.row(c) = current.values.row(c);
    }
    state_.support[c] = current.support[c];
  }
  return state_;
}

int AlignmentTargets::valid_count() const {
  return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

AlignmentTargets assemble_alignment_targets(const ClassPrototypes& prototypes,
                                            const Matrix& point_logits,
                                            const MixedImageSample& mixed) {
  const auto n = point_logits.rows();
  if (static_cast<std::size_t>(n) != mixed.mask_at_points.size() ||
      mixed.source_labels_at_points.size() != mixed.mask_at_points.size()) {
    throw ContractError("assemble_alignment_targets: point counts differ");
  }
  AlignmentTargets out{Matrix(n, point_logits.cols()), std::vector<std::uint8_t>(n, 1)};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mixed.mask_at_points[i] == 1) {
      const int c = mixed.source_labels_at_points[i];
      if (c >= 0 && c < prototypes.num_classes() && prototypes.present(c)) {
        out.targets.row(i) = prototypes.values.row(c);
      } else {
        out.targets.row(i).setZero();
        out.valid[i] = 0;
      }
    } else {
      out.targets.row(i) = point_logits.row(i);
    }
  }
  return out;
}

AlignmentTargets prototype_targets(const ClassPrototypes& prototypes,
                                   std::span<const int> source_labels) {
  const auto n = static_cast<Eigen::Index>(source_labels.size());
  AlignmentTargets out{Matrix::Zero(n, prototypes.num_classes()),
                       std::vector<std::uint8_t>(source_labels.size(), 0)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = source_labels[i];
    if (c >= 0 && c < prototypes.num_classes() && prototypes.present(c)) {
      out.targets.row(i) = prototypes.values.row(c);
      out.valid[i] = 1;
    }
  }
  return out;
}

}  // namespace comodal
