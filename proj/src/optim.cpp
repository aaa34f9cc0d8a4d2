#include "comodal/optim.hpp"

#include "comodal/errors.hpp"

#include <cmath>

namespace comodal {

AdamState AdamState::for_params(const NetParams& params) {
  AdamState s;
  s.first_moment = params.zeros_like();
  s.second_moment = params.zeros_like();
  return s;
}

void adam_step(NetParams& params, const NetParams& grads, AdamState& state, double lr) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment)) {
    throw ContractError("adam_step: parameter, gradient and state shapes differ");
  }
  for (const Matrix* g : grads.tensors()) {
    if (!g->allFinite()) throw NumericError("adam_step: non-finite gradient");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  const auto g = grads.tensors();
  for (int i = 0; i < NetParams::kTensors; ++i) {
    m[i]->array() = state.beta1 * m[i]->array() + (1.0 - state.beta1) * g[i]->array();
    v[i]->array() = state.beta2 * v[i]->array() + (1.0 - state.beta2) * g[i]->array().square();
    p[i]->array() -= lr * (m[i]->array() / c1) / ((v[i]->array() / c2).sqrt() + state.epsilon);
  }
}

double poly_lr(long iter, long iterations, double base_lr, double power) {
  if (iterations <= 0) throw ConfigError("poly_lr: iterations must be positive");
  if (iter < 0 || iter > iterations) throw ContractError("poly_lr: iteration out of range");
  if (iter == iterations) return 0.0;
  return base_lr * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(iterations), power);
}

}  // namespace comodal
