#include "comodal/losses.hpp"

#include "comodal/errors.hpp"

#include <cmath>

namespace comodal {

Matrix log_softmax(const Matrix& logits) {
  if (logits.hasNaN()) throw NumericError("softmax: NaN logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const double lse = top + std::log((logits.row(i).array() - top).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix softmax(const Matrix& logits) {
  if (logits.hasNaN()) throw NumericError("softmax: NaN logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - top).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

LossReport cross_entropy(const Matrix& logits, std::span<const int> labels,
                         std::span<const double> weights, std::string name) {
  const auto m = logits.rows();
  const auto c = logits.cols();
  if (static_cast<std::size_t>(m) != labels.size()) {
    throw ContractError(name + ": " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(m) + " rows");
  }
  if (!weights.empty() && weights.size() != labels.size()) {
    throw ContractError(name + ": weight count does not match rows");
  }
  LossReport r{std::move(name), 0.0, static_cast<int>(m), Matrix::Zero(m, c), {}};
  if (m == 0) return r;
  const Matrix logp = log_softmax(logits);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) {
      throw ContractError(r.name + ": label " + std::to_string(y) + " outside [0, " +
                          std::to_string(c) + ")");
    }
    const double w = weights.empty() ? 1.0 : weights[i];
    r.value -= w * logp(i, y);
    r.grad.row(i) = logp.row(i).array().exp() * (w * inv_m);
    r.grad(i, y) -= w * inv_m;
  }
  r.value *= inv_m;
  return r;
}

LossReport kl_pointwise(const Matrix& p_logits, const Matrix& q_logits, bool detach_q,
                        std::string name) {
  if (p_logits.rows() != q_logits.rows() || p_logits.cols() != q_logits.cols()) {
    throw ContractError(name + ": logits shapes differ");
  }
  const auto m = p_logits.rows();
  const auto c = p_logits.cols();
  LossReport r{std::move(name), 0.0, static_cast<int>(m), Matrix::Zero(m, c), {}};
  if (!detach_q) r.grad_q = Matrix::Zero(m, c);
  if (m == 0) return r;
  const Matrix lp = log_softmax(p_logits);
  const Matrix lq = log_softmax(q_logits);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::ArrayXd p = lp.row(i).array().exp().transpose();
    const Eigen::ArrayXd diff = (lp.row(i) - lq.row(i)).array().transpose();
    const double kl = (p * diff).sum();
    r.value += kl;
    r.grad.row(i) = (p * (diff - kl)).transpose() * inv_m;
    if (!detach_q) {
      r.grad_q.row(i) = (lq.row(i).array().exp() - p.transpose()) * inv_m;
    }
  }
  r.value *= inv_m;
  return r;
}

LossReport loss_2d_t(const Matrix& mimicry_at_points, const Matrix& point_logits_3d) {
  return kl_pointwise(mimicry_at_points, point_logits_3d, true, "loss_2d_t");
}

LossReport loss_2d_m(const Matrix& mimicry_at_points, const Matrix& targets,
                     std::span<const std::uint8_t> valid) {
  const auto m = mimicry_at_points.rows();
  if (targets.rows() != m || static_cast<std::size_t>(m) != valid.size()) {
    throw ContractError("loss_2d_m: row counts differ");
  }
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < m; ++i)
    if (valid[i]) rows.push_back(i);
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix p(n, mimicry_at_points.cols());
  Matrix q(n, targets.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    p.row(k) = mimicry_at_points.row(rows[k]);
    q.row(k) = targets.row(rows[k]);
  }
  LossReport sub = kl_pointwise(p, q, true, "loss_2d_m");
  LossReport r{"loss_2d_m", sub.value, static_cast<int>(n),
               Matrix::Zero(m, mimicry_at_points.cols()), {}};
  for (Eigen::Index k = 0; k < n; ++k) r.grad.row(rows[k]) = sub.grad.row(k);
  return r;
}

LossReport loss_3d_t(const Matrix& point_logits, const PointPseudoLabels& hybrid) {
  return cross_entropy(point_logits, hybrid.labels, {}, "loss_3d_t");
}

LossReport loss_3d_m(const Matrix& mixed_logits, const MixedCloudSample& mixed) {
  if (mixed_logits.rows() != mixed.points.rows()) {
    throw ContractError("loss_3d_m: logits rows do not match the mixed cloud");
  }
  return cross_entropy(mixed_logits, mixed.labels, {}, "loss_3d_m");
}

namespace {

WeightedTotal combine(std::initializer_list<std::pair<const std::optional<LossReport>*, double>> parts) {
  WeightedTotal total;
  for (const auto& [report, weight] : parts) {
    if (weight < 0.0) throw ConfigError("loss weights must be non-negative");
    if (!report->has_value()) continue;
    LossReport scaled = **report;
    scaled.grad *= weight;
    if (scaled.grad_q.size() > 0) scaled.grad_q *= weight;
    total.value += weight * scaled.value;
    total.terms.push_back(std::move(scaled));
    total.weights.push_back(weight);
  }
  return total;
}

}  // namespace

WeightedTotal total_2d(const std::optional<LossReport>& source, const std::optional<LossReport>& target,
                       const std::optional<LossReport>& mixed, double weight_target,
                       double weight_mixed) {
  return combine({{&source, 1.0}, {&target, weight_target}, {&mixed, weight_mixed}});
}

WeightedTotal total_3d(const std::optional<LossReport>& target, const std::optional<LossReport>& mixed,
                       double weight_mixed) {
  return combine({{&target, 1.0}, {&mixed, weight_mixed}});
}

}  // namespace comodal
