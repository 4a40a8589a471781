#pragma once

#include "srvcc/common.hpp"

namespace srvcc {

// Diagonal Gaussian mixture over a latent space.
struct GaussianMixture {
  Vec weights;  // simplex
  Mat means;    // components x dim
  Mat stds;     // components x dim, strictly positive

  int components() const { return static_cast<int>(means.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }

  void validate() const;
  static GaussianMixture standard_normal(int dim);
};

struct MixtureSample {
  int component = 0;
  Vec epsilon;
  Vec z;  // means.row(component) + stds.row(component) * epsilon
};

double gmm_log_density(const GaussianMixture& gmm, const Vec& z);

// Posterior over components given z; sums to one.
Vec gmm_responsibilities(const GaussianMixture& gmm, const Vec& z);

MixtureSample gmm_sample(const GaussianMixture& gmm, Rng& rng);

// epsilon such that means.row(c) + stds.row(c) * epsilon == z.
Vec gmm_inverse_reparam(const GaussianMixture& gmm, const Vec& z, int component);

// Diagonal EM.  Stds are floored at std_floor; a component that loses all its
// mass is reseeded at the point farthest from the current centres, and
// reseed_count (when given) reports how often that happened.
GaussianMixture fit_em(const Mat& points, int components, Rng& rng, int max_iters = 200,
                       double tol = 1e-8, double std_floor = 1e-4,
                       std::vector<double>* log_likelihood_trace = nullptr,
                       int* reseed_count = nullptr);

double gmm_data_log_likelihood(const GaussianMixture& gmm, const Mat& points);

// Gradients with respect to the trainable parameterisation: mixture weights as
// softmax(logits), stds as softplus(raw) + floor.  d_stds below is taken with
// respect to the stds themselves; GmmParams::chain applies the softplus factor.
struct GmmGrads {
  Vec d_logits;
  Mat d_means;
  Mat d_stds;

  static GmmGrads zeros_like(const GaussianMixture& gmm);
  void add_scaled(const GmmGrads& other, double s);
  void setZero();
};

Vec gmm_log_density_grad_z(const GaussianMixture& gmm, const Vec& z);

// Accumulates coef * d log p(z) / d(logits, means, stds) into grads.
void gmm_log_density_param_grads(const GaussianMixture& gmm, const Vec& z, double coef,
                                 GmmGrads& grads);

// Backpropagates d_gamma (gradient w.r.t. the responsibilities at z) into the
// prior parameters (accumulated) and returns the gradient w.r.t. z.
Vec gmm_responsibilities_backward(const GaussianMixture& gmm, const Vec& z, const Vec& d_gamma,
                                  GmmGrads* grads);

// Unconstrained parameterisation used during gradient training.
struct GmmParams {
  Vec logits;
  Mat means;
  Mat std_raw;
  double std_floor = 1e-4;

  int components() const { return static_cast<int>(means.rows()); }
  int dim() const { return static_cast<int>(means.cols()); }

  GaussianMixture mixture() const;
  static GmmParams from_mixture(const GaussianMixture& gmm, double std_floor = 1e-4);

  Eigen::Index param_count() const { return logits.size() + means.size() + std_raw.size(); }
  Vec pack() const;
  void unpack(const Vec& flat);

  // Converts grads w.r.t. (logits, means, stds) into grads w.r.t.
  // (logits, means, std_raw), packed in the same order as pack().
  Vec chain(const GmmGrads& grads) const;
};

}  // namespace srvcc
