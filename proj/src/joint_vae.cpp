#include "srvcc/joint_vae.hpp"

namespace srvcc {

void JointVae::validate() const {
  encoder.validate();
  decoder.validate();
  prior.mixture().validate();
  if (row_latent < 1 || col_latent < 1) throw DataError("joint model: side latent dims must be positive");
  if (encoder.input_dim() != row_latent + col_latent) {
    throw DataError("joint model: encoder input dim does not match the side latent dims");
  }
  if (encoder.output_dim() % 2 != 0) throw DataError("joint model: encoder must emit paired heads");
  const int L = encoder.output_dim() / 2;
  if (decoder.input_dim() != L + row_latent + col_latent) {
    throw DataError("joint model: decoder input dim does not match concat(z_rc, z_r, z_c)");
  }
  if (decoder.output_dim() != 1) throw DataError("joint model: decoder must emit one cell value");
  if (prior.means.cols() != L) throw DataError("joint model: prior dimension mismatch");
}

JointVae make_joint_vae(int row_latent, int col_latent, int joint_latent, int components,
                        int hidden, Likelihood lik, Rng& rng) {
  JointVae jv;
  jv.row_latent = row_latent;
  jv.col_latent = col_latent;
  jv.likelihood = lik;
  jv.encoder = mlp_init(row_latent + col_latent, {hidden}, 2 * joint_latent, rng);
  // Same low starting noise as the side encoders, and for the same reason.
  jv.encoder.layers.back().bias.tail(joint_latent).setConstant(std::log(std::expm1(0.01)));
  jv.decoder = mlp_init(joint_latent + row_latent + col_latent, {hidden}, 1, rng);

  GaussianMixture prior;
  prior.weights = Vec::Constant(components, 1.0 / components);
  prior.means = Mat::Zero(components, joint_latent);
  for (int c = 0; c < components; ++c) {
    prior.means.row(c) = 0.5 * rng.normal_vec(joint_latent).transpose();
  }
  prior.stds = Mat::Ones(components, joint_latent);
  jv.prior = GmmParams::from_mixture(prior);
  return jv;
}

void joint_encode(const JointVae& jv, const Vec& z_r, const Vec& z_c, Vec& mu, Vec& sigma,
                  Vec* std_head, MlpTrace* trace) {
  if (z_r.size() != jv.row_latent || z_c.size() != jv.col_latent) {
    throw DataError("joint_encode: side latent dims do not match the model");
  }
  Vec u(z_r.size() + z_c.size());
  u << z_r, z_c;
  Vec out = mlp_forward(jv.encoder, u, trace);
  const int L = jv.latent_dim();
  mu = out.head(L);
  Vec head = out.tail(L);
  sigma = head.unaryExpr([](double h) { return softplus(h) + 1e-6; });
  if (std_head) *std_head = head;
}

double joint_decode(const JointVae& jv, const Vec& z_rc, const Vec& z_r, const Vec& z_c) {
  Vec in(z_rc.size() + z_r.size() + z_c.size());
  in << z_rc, z_r, z_c;
  const double raw = mlp_forward(jv.decoder, in)[0];
  return jv.likelihood == Likelihood::bernoulli ? sigmoid(raw) : raw;
}

JointEval joint_eval_with_noise(const JointVae& jv, const Cell& cell, const Vec& z_r,
                                const Vec& z_c, const Mat& noise) {
  const int L = jv.latent_dim();
  const int K = static_cast<int>(noise.cols());
  if (noise.rows() != L || K < 1) throw DataError("joint_eval: bad noise shape");
  if (cell.present && !std::isfinite(cell.value)) throw DataError("joint_eval: non-finite cell value");

  JointEval ev;
  ev.present = cell.present;
  joint_encode(jv, z_r, z_c, ev.mu, ev.sigma, &ev.std_head, &ev.enc_trace);
  const GaussianMixture prior = jv.prior.mixture();

  Vec x(1);
  x << (cell.present ? cell.value : 0.0);
  const Vec mask = cell.present ? Vec() : Vec::Zero(1);

  ev.samples.resize(K);
  ev.dec_traces.resize(K);
  ev.recon_grad_out.resize(K);
  ev.prior_grad_z.resize(K);
  Vec log_w(K);
  double recon = 0.0, kl = 0.0;
  for (int k = 0; k < K; ++k) {
    auto& s = ev.samples[k];
    s.epsilon = noise.col(k);
    s.z = ev.mu + ev.sigma.cwiseProduct(s.epsilon);
    s.z_kl = s.z;  // no scaled path at the cell level

    Vec in(L + jv.row_latent + jv.col_latent);
    in << s.z, z_r, z_c;
    Vec decoded = mlp_forward(jv.decoder, in, &ev.dec_traces[k]);
    s.log_lik = reconstruction_log_likelihood(x, decoded, jv.likelihood, mask);
    s.log_prior = gmm_log_density(prior, s.z);
    s.log_q = 0.0;
    for (int d = 0; d < L; ++d) {
      s.log_q += -std::log(ev.sigma[d]) - 0.5 * s.epsilon[d] * s.epsilon[d] - 0.5 * kLog2Pi;
    }
    s.component = 0;
    if (prior.components() > 1) {
      Vec resp = gmm_responsibilities(prior, s.z);
      resp.maxCoeff(&s.component);
    }

    ev.recon_grad_out[k] = reconstruction_ll_grad(x, decoded, jv.likelihood, mask);
    ev.prior_grad_z[k] = gmm_log_density_grad_z(prior, s.z);

    log_w[k] = s.log_weight();
    check_finite(log_w[k], "joint importance weight");
    recon += s.log_lik;
    kl += s.log_q - s.log_prior;
  }
  ev.weights = normalize_weights(log_w);
  ev.recon_term = recon / K;
  ev.kl_term = kl / K;
  return ev;
}

JointEval joint_eval(const JointVae& jv, const Cell& cell, const Vec& z_r, const Vec& z_c, int K,
                     Rng& rng) {
  if (K < 1) throw DataError("joint_eval: need at least one draw");
  Mat noise(jv.latent_dim(), K);
  for (int k = 0; k < K; ++k) noise.col(k) = rng.normal_vec(jv.latent_dim());
  return joint_eval_with_noise(jv, cell, z_r, z_c, noise);
}

double joint_negative_elbo(const JointVae& jv, const Cell& cell, const Vec& z_r, const Vec& z_c,
                           int K, Rng& rng, JointEval* detail) {
  JointEval ev = joint_eval(jv, cell, z_r, z_c, K, rng);
  const double loss = ev.negative_elbo();
  check_finite(loss, "joint negative ELBO");
  if (detail) *detail = std::move(ev);
  return loss;
}

Vec joint_responsibilities(const JointVae& jv, const Vec& z_rc) {
  return gmm_responsibilities(jv.prior.mixture(), z_rc);
}

JointGrads JointGrads::zeros_like(const JointVae& jv) {
  JointGrads g;
  g.enc = MlpGrads::zeros_like(jv.encoder);
  g.dec = MlpGrads::zeros_like(jv.decoder);
  g.prior = GmmGrads::zeros_like(jv.prior.mixture());
  g.d_z_r = Vec::Zero(jv.row_latent);
  g.d_z_c = Vec::Zero(jv.col_latent);
  return g;
}

void JointGrads::setZero() {
  enc.setZero();
  dec.setZero();
  prior.setZero();
  d_z_r.setZero();
  d_z_c.setZero();
}

void joint_backward(const JointVae& jv, const JointEval& eval, EstimatorMode mode, double coef,
                    JointGrads& grads, bool gdreg_sample_component, Rng* rng) {
  const int K = eval.draws();
  const int L = jv.latent_dim();
  const GaussianMixture mix = jv.prior.mixture();

  Vec coeffs(K);
  if (mode == EstimatorMode::elbo_mean) {
    coeffs.setConstant(1.0 / K);
  } else {
    coeffs = eval.weights.normalized;
  }

  // decoder backward per draw; input gradients are reused for every other term
  std::vector<Vec> a(K), b_r(K), b_c(K);
  for (int k = 0; k < K; ++k) {
    Vec in_grad = mlp_backward(jv.decoder, eval.dec_traces[k], eval.recon_grad_out[k], &grads.dec,
                               -coef * coeffs[k]);
    a[k] = in_grad.head(L);
    b_r[k] = in_grad.segment(L, jv.row_latent);
    b_c[k] = in_grad.tail(jv.col_latent);
  }

  const Arr sig_head = eval.std_head.unaryExpr([](double h) { return sigmoid(h); }).array();
  const Arr inv_std = eval.sigma.array().inverse();

  // per-draw total derivative of log w through the encoder heads
  auto naive_out_grad = [&](int k) {
    const Arr core = eval.prior_grad_z[k].array() + a[k].array();
    Vec out(2 * L);
    out.head(L) = core.matrix();
    out.tail(L) = ((core * eval.samples[k].epsilon.array() + inv_std) * sig_head).matrix();
    return out;
  };

  if (mode == EstimatorMode::iw_dreg) {
    // encoder: score-free path with squared normalized weights. The input
    // gradient of the same backward doubles as the inference-path part of the
    // upstream gradients (the side latents act as inference inputs here), so
    // the upstream estimate stays score-free as well.
    Vec out_sum = Vec::Zero(2 * L);
    for (int k = 0; k < K; ++k) {
      const double w = eval.weights.normalized[k];
      const Arr t = eval.prior_grad_z[k].array() + eval.samples[k].epsilon.array() * inv_std +
                    a[k].array();
      Vec out(2 * L);
      out.head(L) = t.matrix();
      out.tail(L) = ((t * eval.samples[k].epsilon.array()) * sig_head).matrix();
      out_sum += -coef * w * w * out;
    }
    Vec u_grad = mlp_backward(jv.encoder, eval.enc_trace, out_sum, &grads.enc);
    grads.d_z_r += u_grad.head(jv.row_latent);
    grads.d_z_c += u_grad.tail(jv.col_latent);

    // upstream: plus the direct (decoder-conditioning) term
    for (int k = 0; k < K; ++k) {
      const double w = eval.weights.normalized[k];
      grads.d_z_r += -coef * w * b_r[k];
      grads.d_z_c += -coef * w * b_c[k];
    }

    // prior: reparameterize each draw through the attributed mixture component
    for (int k = 0; k < K; ++k) {
      const auto& s = eval.samples[k];
      const double w = eval.weights.normalized[k];
      int comp = s.component;
      Vec resp = gmm_responsibilities(mix, s.z);
      if (gdreg_sample_component) {
        if (!rng) throw DataError("gdreg: component sampling requires a random stream");
        comp = rng->categorical(resp);
      }
      const Vec eps_tilde = gmm_inverse_reparam(mix, s.z, comp);
      const Arr dz_log_w =
          eval.prior_grad_z[k].array() + a[k].array() + s.epsilon.array() * inv_std;
      const Vec u = (w * a[k].array() - w * w * dz_log_w).matrix();
      grads.prior.d_means.row(comp) -= coef * u.transpose();
      grads.prior.d_stds.row(comp) -= coef * u.cwiseProduct(eps_tilde).transpose();
      grads.prior.d_logits -= coef * w * (resp - mix.weights);
    }
    return;
  }

  // naive modes: one combined encoder backward (the per-draw coefficients are
  // fixed scalars, so the out-gradients sum linearly)
  Vec out_sum = Vec::Zero(2 * L);
  for (int k = 0; k < K; ++k) {
    out_sum += -coef * coeffs[k] * naive_out_grad(k);
    grads.d_z_r += -coef * coeffs[k] * b_r[k];
    grads.d_z_c += -coef * coeffs[k] * b_c[k];
    gmm_log_density_param_grads(mix, eval.samples[k].z, -coef * coeffs[k], grads.prior);
  }
  Vec u_grad = mlp_backward(jv.encoder, eval.enc_trace, out_sum, &grads.enc);
  grads.d_z_r += u_grad.head(jv.row_latent);
  grads.d_z_c += u_grad.tail(jv.col_latent);
}

void joint_sample_backward(const JointVae& jv, const JointEval& eval, int k, const Vec& d_z,
                           double coef, JointGrads& grads) {
  const int L = jv.latent_dim();
  if (d_z.size() != L) throw DataError("joint sample gradient has the wrong size");
  const Arr sig_head = eval.std_head.unaryExpr([](double h) { return sigmoid(h); }).array();
  Vec out_grad(2 * L);
  out_grad.head(L) = coef * d_z;
  out_grad.tail(L) =
      (coef * d_z.array() * eval.samples[k].epsilon.array() * sig_head).matrix();
  Vec u_grad = mlp_backward(jv.encoder, eval.enc_trace, out_grad, &grads.enc);
  grads.d_z_r += u_grad.head(jv.row_latent);
  grads.d_z_c += u_grad.tail(jv.col_latent);
}

}  // namespace srvcc
