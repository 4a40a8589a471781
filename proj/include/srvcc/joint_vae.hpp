#pragma once

#include "srvcc/estimators.hpp"
#include "srvcc/side_vae.hpp"

namespace srvcc {

// Cell-level model: one latent per (row, column) pair, conditioned on the two
// side latents. The encoder reads concat(z_r, z_c); the decoder reconstructs
// the scalar cell from concat(z_rc, z_r, z_c).
struct JointVae {
  MlpParams encoder;  // (L_r + L_c) -> 2 * L_rc
  MlpParams decoder;  // (L_rc + L_r + L_c) -> 1
  GmmParams prior;    // M components over L_rc
  int row_latent = 0;
  int col_latent = 0;
  Likelihood likelihood = Likelihood::gaussian_unit_variance;

  int latent_dim() const { return encoder.output_dim() / 2; }
  int components() const { return static_cast<int>(prior.logits.size()); }
  void validate() const;
};

JointVae make_joint_vae(int row_latent, int col_latent, int joint_latent, int components,
                        int hidden, Likelihood lik, Rng& rng);

struct Cell {
  int row = 0;
  int col = 0;
  double value = 0.0;
  bool present = true;
};

// everything computed in one forward pass over K draws of z_rc
struct JointEval {
  Vec mu, sigma, std_head;
  MlpTrace enc_trace;
  std::vector<ImportanceSample> samples;
  std::vector<MlpTrace> dec_traces;
  std::vector<Vec> recon_grad_out;  // dlog p / d decoder output, per draw
  std::vector<Vec> prior_grad_z;
  WeightSet weights;
  double recon_term = 0.0;  // mean log-likelihood over draws
  double kl_term = 0.0;     // mean(log q - log prior)
  bool present = true;

  int draws() const { return static_cast<int>(samples.size()); }
  double negative_elbo() const { return kl_term - recon_term; }
  double iw_loss() const {
    Vec lw(draws());
    for (int k = 0; k < draws(); ++k) lw[k] = samples[k].log_weight();
    return -(logsumexp(lw) - std::log(static_cast<double>(draws())));
  }
};

// posterior parameters of z_rc given the two side samples
void joint_encode(const JointVae& jv, const Vec& z_r, const Vec& z_c, Vec& mu, Vec& sigma,
                  Vec* std_head = nullptr, MlpTrace* trace = nullptr);

// reconstructed cell value; bernoulli squashes the logit to (0,1)
double joint_decode(const JointVae& jv, const Vec& z_rc, const Vec& z_r, const Vec& z_c);

JointEval joint_eval_with_noise(const JointVae& jv, const Cell& cell, const Vec& z_r,
                                const Vec& z_c, const Mat& noise);
JointEval joint_eval(const JointVae& jv, const Cell& cell, const Vec& z_r, const Vec& z_c, int K,
                     Rng& rng);

double joint_negative_elbo(const JointVae& jv, const Cell& cell, const Vec& z_r, const Vec& z_c,
                           int K, Rng& rng, JointEval* detail = nullptr);

Vec joint_responsibilities(const JointVae& jv, const Vec& z_rc);

struct JointGrads {
  MlpGrads enc, dec;
  GmmGrads prior;
  Vec d_z_r, d_z_c;  // upstream gradients, chained into the side encoders by the caller

  static JointGrads zeros_like(const JointVae& jv);
  void setZero();
};

// accumulates coef * d(loss)/d(params) for the chosen estimator; the upstream
// d_z_r / d_z_c slots receive the same scaling
void joint_backward(const JointVae& jv, const JointEval& eval, EstimatorMode mode, double coef,
                    JointGrads& grads, bool gdreg_sample_component = false, Rng* rng = nullptr);

// Chains a gradient arriving at draw k's z_rc back through the joint encoder,
// accumulating coef * grad into enc and the upstream d_z_r / d_z_c slots.
void joint_sample_backward(const JointVae& jv, const JointEval& eval, int k, const Vec& d_z,
                           double coef, JointGrads& grads);

}  // namespace srvcc
