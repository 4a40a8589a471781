#pragma once

#include "srvcc/mlp.hpp"

#include <functional>

namespace srvcc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected first/second moment accumulators over a flat parameter
// vector (packed in the owning structure's canonical order).
struct AdamState {
  Vec m, v;
  std::int64_t step = 0;

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : m(Vec::Zero(n)), v(Vec::Zero(n)) {}
};

void adam_step(Vec& params, const Vec& grads, AdamState& state, const AdamConfig& cfg);

// Convenience overload operating on a whole MLP via pack/unpack.
void adam_step(MlpParams& mlp, const MlpGrads& grads, AdamState& state, const AdamConfig& cfg);

// Central finite differences of an arbitrary scalar loss over a flat
// parameter vector.  Kept deliberately independent of the analytic gradient
// paths so it can serve as their reference.
Vec finite_diff_gradient(const std::function<double(const Vec&)>& loss, const Vec& params,
                         double step = 1e-5);

}  // namespace srvcc
