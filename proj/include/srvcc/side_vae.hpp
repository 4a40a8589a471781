#pragma once

#include "srvcc/estimators.hpp"
#include "srvcc/gmm.hpp"
#include "srvcc/mlp.hpp"

namespace srvcc {

enum class Likelihood { gaussian_unit_variance, bernoulli };

Likelihood likelihood_from_string(const std::string& name);
std::string likelihood_name(Likelihood lik);

// One side (rows or columns) of the co-clustering model: encoder with mean and
// std heads, decoder, mixture prior over the latent space, and the per-dimension
// scale vector applied to posterior means on the reconstruction path only.
struct SideVae {
  MlpParams encoder;  // input -> 2*latent (mean head, then std head)
  MlpParams decoder;  // latent -> input
  GmmParams prior;
  Vec scale;          // f >= 1
  Likelihood likelihood = Likelihood::gaussian_unit_variance;

  int input_dim() const { return encoder.input_dim(); }
  int latent_dim() const { return encoder.output_dim() / 2; }
  void validate() const;
};

SideVae make_side_vae(int input_dim, int latent_dim, int clusters, int hidden, Likelihood lik,
                      Rng& rng);

struct PosteriorParams {
  Vec mean_raw;  // mu'
  Vec mean;      // scale .* mu'
  Vec std;       // softplus(head) + 1e-6
  Vec std_head;
  MlpTrace enc_trace;
};

PosteriorParams encode(const SideVae& vae, const Vec& x);

// decoded is the raw decoder output; the Bernoulli likelihood squashes it
// internally.  Entries with mask == 0 contribute exactly zero.  An empty mask
// means fully observed.
double reconstruction_log_likelihood(const Vec& x, const Vec& decoded, Likelihood lik,
                                     const Vec& mask);
Vec reconstruction_ll_grad(const Vec& x, const Vec& decoded, Likelihood lik, const Vec& mask);

// Everything the gradient estimators need about one item's K latent draws.
struct SideEval {
  PosteriorParams post;
  std::vector<ImportanceSample> samples;
  std::vector<MlpTrace> dec_traces;
  std::vector<Vec> recon_grad_out;  // d log_lik / d decoder output
  std::vector<Vec> recon_grad_z;    // d log_lik / d z
  std::vector<Vec> prior_grad_z;    // d log prior / d z_kl
  WeightSet weights;
  double recon_term = 0.0;  // mean_k log_lik
  double kl_term = 0.0;     // mean_k (log_q - log_prior)

  int draws() const { return static_cast<int>(samples.size()); }
  double negative_elbo() const { return kl_term - recon_term; }
  double iw_loss() const {
    return -(logsumexp(weights.log_weights) - std::log(static_cast<double>(draws())));
  }
};

SideEval side_eval(const SideVae& vae, const Vec& x, const Vec& mask, int K, Rng& rng);
// noise holds one epsilon per column; K = noise.cols().
SideEval side_eval_with_noise(const SideVae& vae, const Vec& x, const Vec& mask, const Mat& noise);

// Plain Monte-Carlo estimate -E[log p(x|z)] + E[log q(z'|x) - log p(z')], with
// the reconstruction path at the scaled mean and the divergence path at the
// unscaled mean under shared noise.
double negative_elbo(const SideVae& vae, const Vec& x, const Vec& mask, int K, Rng& rng,
                     SideEval* detail = nullptr);

struct SideGrads {
  MlpGrads enc, dec;
  GmmGrads prior;

  static SideGrads zeros_like(const SideVae& vae);
  void add_scaled(const SideGrads& other, double s);
  void setZero();
};

// Accumulates coef * d(objective)/d(params) into grads.  The objective is the
// plain negative ELBO for elbo_mean and the negative importance-weighted bound
// for the iw_* modes.  gdreg_sample draws the inverted component from the
// prior responsibilities instead of taking the argmax.
void side_elbo_backward(const SideVae& vae, const SideEval& eval, EstimatorMode mode, double coef,
                        SideGrads& grads, bool gdreg_sample = false, Rng* rng = nullptr);

// Chains a gradient arriving at the reconstruction-path sample z_k of eval
// back through the encoder (both heads), accumulating coef * grad.
void side_sample_backward(const SideVae& vae, const SideEval& eval, int k, const Vec& d_z,
                          double coef, MlpGrads& enc_grads);

// f_d = clamp(tau / (std(mu'_d) + 1e-8), 1, f_max) over the batch (population std).
void update_scale(SideVae& vae, const Mat& inputs, double tau, double f_max);

// Prior responsibilities at the unscaled posterior mean (or at a posterior
// sample when sample is set).
Vec cluster_assign(const SideVae& vae, const Vec& x, bool sample = false, Rng* rng = nullptr);

// Estimator entry points for the importance-weighted side objective.  All
// return gradients of the negative bound (the quantity being minimised).
MlpGrads iwae_decoder_grad(const SideVae& vae, const SideEval& eval);
MlpGrads dreg_encoder_grad(const SideVae& vae, const SideEval& eval);
GmmGrads gdreg_prior_grad(const SideVae& vae, const SideEval& eval, bool sample_component = false,
                          Rng* rng = nullptr);
void naive_score_grad(const SideVae& vae, const SideEval& eval, GradTarget target,
                      MlpGrads* enc_grads, GmmGrads* prior_grads);

}  // namespace srvcc
