#pragma once

#include "srvcc/common.hpp"

namespace srvcc {

// Self-normalised importance weights in log space.
struct WeightSet {
  Vec log_weights;
  Vec normalized;  // softmax(log_weights)
};

WeightSet normalize_weights(const Vec& log_weights);

// One latent draw of an importance-weighted objective.  z is the
// reconstruction-path sample (scaled posterior mean); z_kl the divergence-path
// sample (unscaled mean, same noise).  The two coincide when the scale is one.
struct ImportanceSample {
  Vec epsilon;
  Vec z;
  Vec z_kl;
  double log_prior = 0.0;
  double log_lik = 0.0;
  double log_q = 0.0;
  int component = 0;  // argmax prior responsibility at z_kl

  double log_weight() const { return log_prior + log_lik - log_q; }
};

// elbo_mean  -- gradient of the plain Monte-Carlo ELBO (weights 1/K)
// iw_naive   -- exact total derivative of the K-sample importance bound
// iw_dreg    -- doubly reparameterised encoder / generalised prior estimators
enum class EstimatorMode { elbo_mean, iw_naive, iw_dreg };

enum class GradTarget { encoder, prior };

}  // namespace srvcc
