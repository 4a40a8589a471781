#pragma once

#include "srvcc/gmm.hpp"
#include "srvcc/mlp.hpp"

namespace srvcc {

// Contrastive critic over (data item, latent) pairs. The bilinear form scores
// h(x, z) = z . (P x); the mlp form runs a small network on concat(x, z).
enum class CriticKind { bilinear, mlp };

struct InfoNceCritic {
  CriticKind kind = CriticKind::bilinear;
  Mat projection;  // latent_dim x input_dim, bilinear only
  MlpParams net;   // (input_dim + latent_dim) -> 1, mlp only
  double temperature = 0.1;

  int param_count() const;
  Vec pack() const;
  void unpack(const Vec& flat);
  void validate() const;
};

InfoNceCritic make_bilinear_critic(int input_dim, int latent_dim, Rng& rng,
                                   double temperature = 0.1);
InfoNceCritic make_mlp_critic(int input_dim, int latent_dim, int hidden, Rng& rng,
                              double temperature = 0.1);

double critic_score(const InfoNceCritic& critic, const Vec& x, const Vec& z);

// Batch contrastive bound: rows of xs and zs are matched pairs. Returns
// c = sum_i log softmax_j(s(j,i)) at j == i, always <= 0.
double info_nce(const InfoNceCritic& critic, const Mat& xs, const Mat& zs);

struct CriticGrads {
  Mat projection;
  MlpGrads net;
  static CriticGrads zeros_like(const InfoNceCritic& critic);
  void setZero();
  Vec pack() const;
};

// Accumulates coef * dc/d(critic params) and coef * dc/d(z_i) (rows of d_zs,
// resized by the call); returns c itself.
double info_nce_backward(const InfoNceCritic& critic, const Mat& xs, const Mat& zs, double coef,
                         CriticGrads* grads, Mat* d_zs);

// ---- mutual-information machinery over co-cluster memberships ----

struct JointPmf {
  Mat table;  // g x m
  Vec row_marginal, col_marginal;
  void validate() const;
};

// Normalized nonnegative table for the data matrix: shift by the observed
// minimum, zero out masked cells, divide by the total. A flat (all-equal,
// fully shifted to zero) matrix yields the uniform table so downstream
// mutual information degenerates to zero instead of erroring.
Mat matrix_to_pmf(const Mat& x, const MaskMat* mask = nullptr);

double pmf_mutual_information(const Mat& pmf);

// I(X;Y) of the data-derived cell distribution
double empirical_mutual_information(const Mat& x, const MaskMat* mask = nullptr);

// Coarsen the base pmf through soft memberships: table = gr^T * base * gc.
JointPmf coclustered_pmf(const Mat& gamma_r, const Mat& gamma_c, const Mat& base);
double coclustered_mutual_information(const Mat& gamma_r, const Mat& gamma_c, const Mat& base,
                                      JointPmf* out = nullptr);

// d(I_hat)/d(gamma) for both membership matrices, scaled by coef
void coclustered_mi_backward(const Mat& gamma_r, const Mat& gamma_c, const Mat& base, double coef,
                             Mat& d_gamma_r, Mat& d_gamma_c);

inline constexpr double kMiEpsilon = 1e-10;

// J3 = 1 - I_hat/I_orig, clamped to [0,1]. I_orig at or below kMiEpsilon means
// the data carries no co-structure signal; the caller decides how to disable.
double cross_loss(double i_hat, double i_orig);

// Full differentiable chain: memberships are the prior responsibilities at the
// posterior means, so J3 reaches the encoder means and both side priors.
struct CrossLossGrads {
  double value = 0.0;   // J3
  double i_hat = 0.0;
  double i_orig = 0.0;
  Mat d_mu_r, d_mu_c;   // per-row gradients w.r.t. the posterior means
  GmmGrads prior_r, prior_c;
};

CrossLossGrads cross_loss_gradients(const Mat& base_pmf, const GaussianMixture& prior_r,
                                    const GaussianMixture& prior_c, const Mat& mu_r,
                                    const Mat& mu_c, double coef = 1.0);

}  // namespace srvcc
