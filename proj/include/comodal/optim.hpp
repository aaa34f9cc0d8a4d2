#pragma once

#include "comodal/nets.hpp"

namespace comodal {

struct AdamState {
  NetParams first_moment;
  NetParams second_moment;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const NetParams& params);
};

/// One bias-corrected Adam update. Throws NumericError on non-finite
/// gradients, leaving params and state untouched.
void adam_step(NetParams& params, const NetParams& grads, AdamState& state, double lr);

/// base_lr * (1 - iter / iterations)^power.
double poly_lr(long iter, long iterations, double base_lr, double power);

}  // namespace comodal
