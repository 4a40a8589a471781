#include "srvcc/optim.hpp"

namespace srvcc {

void adam_step(Vec& params, const Vec& grads, AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DataError("adam_step: size mismatch");
  if (state.m.size() == 0) state = AdamState(params.size());
  if (state.m.size() != params.size()) throw DataError("adam_step: state size mismatch");
  check_finite(grads, "adam gradients");

  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v.array() = cfg.beta2 * state.v.array() + (1.0 - cfg.beta2) * grads.array().square();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  params.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

void adam_step(MlpParams& mlp, const MlpGrads& grads, AdamState& state, const AdamConfig& cfg) {
  Vec flat = mlp.pack();
  adam_step(flat, grads.pack(), state, cfg);
  mlp.unpack(flat);
}

Vec finite_diff_gradient(const std::function<double(const Vec&)>& loss, const Vec& params,
                         double step) {
  Vec grad(params.size());
  Vec p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + step;
    const double up = loss(p);
    p[i] = orig - step;
    const double down = loss(p);
    p[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace srvcc
