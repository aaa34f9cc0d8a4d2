#pragma once

#include "comodal/types.hpp"

#include <cmath>
#include <functional>

namespace testing {

using comodal::Matrix;
using comodal::Rng;

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = comodal::uniform(rng, -scale, scale);
  return m;
}

/// Largest relative error between `analytic` and central differences of `f`
/// with respect to each entry of `x`. Entries whose both magnitudes are
/// below `floor` are compared absolutely.
inline double max_fd_error(Matrix& x, const Matrix& analytic, const std::function<double()>& f,
                           double eps = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + eps;
    const double up = f();
    x.data()[i] = saved - eps;
    const double down = f();
    x.data()[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    const double a = analytic.data()[i];
    const double scale = std::max({std::abs(numeric), std::abs(a), floor});
    worst = std::max(worst, std::abs(numeric - a) / scale);
  }
  return worst;
}

}  // namespace testing
