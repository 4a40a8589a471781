#include "srvcc/estimators.hpp"

#include "srvcc/side_vae.hpp"

namespace srvcc {

WeightSet normalize_weights(const Vec& log_weights) {
  if (log_weights.size() == 0) throw DataError("normalize_weights: empty input");
  check_finite(log_weights, "log importance weights");
  WeightSet ws;
  ws.log_weights = log_weights;
  Vec shifted = log_weights.array() - log_weights.maxCoeff();
  ws.normalized = shifted.array().exp().matrix();
  ws.normalized /= ws.normalized.sum();
  return ws;
}

namespace {

// Mode-dependent per-draw weight applied to the decoder pathwise term and the
// naive encoder/prior terms.
Vec base_coefficients(const SideEval& eval, EstimatorMode mode) {
  const int K = eval.draws();
  if (mode == EstimatorMode::elbo_mean) return Vec::Constant(K, 1.0 / K);
  return eval.weights.normalized;
}

void encoder_backward_from_heads(const SideVae& vae, const SideEval& eval, const Vec& d_mean_raw,
                                 const Vec& d_std, double coef, MlpGrads& enc) {
  const int L = vae.latent_dim();
  Vec out_grad(2 * L);
  out_grad.head(L) = d_mean_raw;
  for (int d = 0; d < L; ++d) {
    out_grad[L + d] = d_std[d] * sigmoid(eval.post.std_head[d]);
  }
  mlp_backward(vae.encoder, eval.post.enc_trace, out_grad, &enc, coef);
}

void accumulate_decoder(const SideVae& vae, const SideEval& eval, const Vec& coeffs, double coef,
                        MlpGrads& dec) {
  for (int k = 0; k < eval.draws(); ++k) {
    mlp_backward(vae.decoder, eval.dec_traces[k], eval.recon_grad_out[k], &dec,
                 -coef * coeffs[k]);
  }
}

void accumulate_encoder_naive(const SideVae& vae, const SideEval& eval, const Vec& coeffs,
                              double coef, MlpGrads& enc) {
  const int L = vae.latent_dim();
  Vec d_mean = Vec::Zero(L), d_std = Vec::Zero(L);
  const Arr inv_std = eval.post.std.array().inverse();
  for (int k = 0; k < eval.draws(); ++k) {
    const auto& s = eval.samples[k];
    const Arr g_rec = eval.recon_grad_z[k].array();
    const Arr g_pri = eval.prior_grad_z[k].array();
    d_mean -= coeffs[k] * (g_pri + vae.scale.array() * g_rec).matrix();
    d_std -= coeffs[k] * (s.epsilon.array() * (g_pri + g_rec) + inv_std).matrix();
  }
  encoder_backward_from_heads(vae, eval, d_mean, d_std, coef, enc);
}

void accumulate_encoder_dreg(const SideVae& vae, const SideEval& eval, double coef,
                             MlpGrads& enc) {
  const int L = vae.latent_dim();
  Vec d_mean = Vec::Zero(L), d_std = Vec::Zero(L);
  const Arr inv_std = eval.post.std.array().inverse();
  for (int k = 0; k < eval.draws(); ++k) {
    const auto& s = eval.samples[k];
    const double w2 = eval.weights.normalized[k] * eval.weights.normalized[k];
    const Arr g_rec = eval.recon_grad_z[k].array();
    // pathwise d/dz' of (log prior - log q), the q-score removed by the
    // double reparameterisation
    const Arr t = eval.prior_grad_z[k].array() + s.epsilon.array() * inv_std;
    d_mean -= w2 * (t + vae.scale.array() * g_rec).matrix();
    d_std -= w2 * ((t + g_rec) * s.epsilon.array()).matrix();
  }
  encoder_backward_from_heads(vae, eval, d_mean, d_std, coef, enc);
}

void accumulate_prior_naive(const SideVae& vae, const SideEval& eval, const Vec& coeffs,
                            double coef, GmmGrads& prior) {
  const GaussianMixture mix = vae.prior.mixture();
  for (int k = 0; k < eval.draws(); ++k) {
    gmm_log_density_param_grads(mix, eval.samples[k].z_kl, -coef * coeffs[k], prior);
  }
}

void accumulate_prior_gdreg(const SideVae& vae, const SideEval& eval, double coef,
                            GmmGrads& prior, bool sample_component, Rng* rng) {
  const GaussianMixture mix = vae.prior.mixture();
  const Arr inv_std = eval.post.std.array().inverse();
  for (int k = 0; k < eval.draws(); ++k) {
    const auto& s = eval.samples[k];
    const double w = eval.weights.normalized[k];
    const double w2 = w * w;
    int comp = s.component;
    Vec resp = gmm_responsibilities(mix, s.z_kl);
    if (sample_component) {
      if (!rng) throw DataError("gdreg: component sampling requires a random stream");
      comp = rng->categorical(resp);
    }
    const Vec eps_tilde = gmm_inverse_reparam(mix, s.z_kl, comp);
    // w * d log p(x|z) - w^2 * d log w, pushed through the prior's sampling map
    const Arr g_rec = eval.recon_grad_z[k].array();
    const Arr dz_log_w = eval.prior_grad_z[k].array() + g_rec + s.epsilon.array() * inv_std;
    const Vec u = (w * g_rec - w2 * dz_log_w).matrix();
    prior.d_means.row(comp) -= coef * u.transpose();
    prior.d_stds.row(comp) -= coef * u.cwiseProduct(eps_tilde).transpose();
    // mixture weights do not enter the sampling map; keep their direct term
    prior.d_logits -= coef * w * (resp - mix.weights);
  }
}

}  // namespace

void side_elbo_backward(const SideVae& vae, const SideEval& eval, EstimatorMode mode, double coef,
                        SideGrads& grads, bool gdreg_sample, Rng* rng) {
  const Vec coeffs = base_coefficients(eval, mode);
  accumulate_decoder(vae, eval, coeffs, coef, grads.dec);
  if (mode == EstimatorMode::iw_dreg) {
    accumulate_encoder_dreg(vae, eval, coef, grads.enc);
    accumulate_prior_gdreg(vae, eval, coef, grads.prior, gdreg_sample, rng);
  } else {
    accumulate_encoder_naive(vae, eval, coeffs, coef, grads.enc);
    accumulate_prior_naive(vae, eval, coeffs, coef, grads.prior);
  }
}

MlpGrads iwae_decoder_grad(const SideVae& vae, const SideEval& eval) {
  MlpGrads g = MlpGrads::zeros_like(vae.decoder);
  accumulate_decoder(vae, eval, eval.weights.normalized, 1.0, g);
  return g;
}

MlpGrads dreg_encoder_grad(const SideVae& vae, const SideEval& eval) {
  MlpGrads g = MlpGrads::zeros_like(vae.encoder);
  accumulate_encoder_dreg(vae, eval, 1.0, g);
  return g;
}

GmmGrads gdreg_prior_grad(const SideVae& vae, const SideEval& eval, bool sample_component,
                          Rng* rng) {
  GmmGrads g = GmmGrads::zeros_like(vae.prior.mixture());
  accumulate_prior_gdreg(vae, eval, 1.0, g, sample_component, rng);
  return g;
}

void naive_score_grad(const SideVae& vae, const SideEval& eval, GradTarget target,
                      MlpGrads* enc_grads, GmmGrads* prior_grads) {
  const Vec coeffs = eval.weights.normalized;
  if (target == GradTarget::encoder) {
    if (!enc_grads) throw DataError("naive_score_grad: missing encoder accumulator");
    accumulate_encoder_naive(vae, eval, coeffs, 1.0, *enc_grads);
  } else {
    if (!prior_grads) throw DataError("naive_score_grad: missing prior accumulator");
    accumulate_prior_naive(vae, eval, coeffs, 1.0, *prior_grads);
  }
}

}  // namespace srvcc
