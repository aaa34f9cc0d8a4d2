#pragma once

#include "comodal/mixing.hpp"
#include "comodal/pseudo.hpp"
#include "comodal/types.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace comodal {

/// Value of one objective term plus its gradient with respect to the logits
/// it was computed from. `grad_q` is only filled by `kl_pointwise` with
/// `detach_q == false`.
struct LossReport {
  std::string name;
  double value = 0.0;
  int count = 0;
  Matrix grad;
  Matrix grad_q;
};

/// Row-wise softmax with max subtraction. Throws NumericError on NaN.
Matrix softmax(const Matrix& logits);
Matrix log_softmax(const Matrix& logits);

/// Mean over rows of -w_i log softmax(logits)[label_i]; gradient (p - onehot) w_i / M.
/// Throws ContractError on labels outside [0, C) or length mismatch.
LossReport cross_entropy(const Matrix& logits, std::span<const int> labels,
                         std::span<const double> weights = {}, std::string name = "ce");

/// (1/M) sum_rows KL(softmax(p_logits) || softmax(q_logits)). The gradient
/// with respect to q_logits is produced only when detach_q is false.
LossReport kl_pointwise(const Matrix& p_logits, const Matrix& q_logits, bool detach_q = true,
                        std::string name = "kl");

/// Target-image distillation: 2D mimicry logits sampled at points against
/// detached 3D point logits.
LossReport loss_2d_t(const Matrix& mimicry_at_points, const Matrix& point_logits_3d);

/// Mixed-image distillation restricted to valid rows; invalid rows get zero
/// gradient and count is the number of valid rows.
LossReport loss_2d_m(const Matrix& mimicry_at_points, const Matrix& targets,
                     std::span<const std::uint8_t> valid);

/// Cross-entropy of 3D point logits against fused 2D pseudo-labels.
LossReport loss_3d_t(const Matrix& point_logits, const PointPseudoLabels& hybrid);

/// Cross-entropy of 3D logits on a merged cloud against its merged labels.
LossReport loss_3d_m(const Matrix& mixed_logits, const MixedCloudSample& mixed);

/// Weighted sum of terms. Each term's gradient in `terms` is already scaled by
/// its weight, so callers can route them to the matching forward rows.
struct WeightedTotal {
  double value = 0.0;
  std::vector<LossReport> terms;
  std::vector<double> weights;
};

/// L_2D = L_2D,s + w_t L_2D,t + w_m L_2D,m. Missing terms count as zero.
/// Throws ConfigError on a negative weight.
WeightedTotal total_2d(const std::optional<LossReport>& source, const std::optional<LossReport>& target,
                       const std::optional<LossReport>& mixed, double weight_target,
                       double weight_mixed);

/// L_3D = L_3D,t + w_m L_3D,m.
WeightedTotal total_3d(const std::optional<LossReport>& target, const std::optional<LossReport>& mixed,
                       double weight_mixed);

}  // namespace comodal
