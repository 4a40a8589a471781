#include "srvcc/side_vae.hpp"

namespace srvcc {

Likelihood likelihood_from_string(const std::string& name) {
  if (name == "gaussian" || name == "gaussian_unit_variance") {
    return Likelihood::gaussian_unit_variance;
  }
  if (name == "bernoulli") return Likelihood::bernoulli;
  throw DataError("unknown likelihood: " + name);
}

std::string likelihood_name(Likelihood lik) {
  return lik == Likelihood::bernoulli ? "bernoulli" : "gaussian";
}

void SideVae::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.output_dim() % 2 != 0) throw DataError("encoder output must hold two heads");
  const int L = latent_dim();
  if (decoder.input_dim() != L) throw DataError("decoder input does not match latent dim");
  if (decoder.output_dim() != encoder.input_dim()) {
    throw DataError("decoder output does not match encoder input");
  }
  if (prior.dim() != L) throw DataError("prior dimension does not match latent dim");
  if (scale.size() != L) throw DataError("scale vector does not match latent dim");
  if (!scale.allFinite() || scale.minCoeff() < 1.0) {
    throw DataError("scale entries must be finite and >= 1");
  }
}

SideVae make_side_vae(int input_dim, int latent_dim, int clusters, int hidden, Likelihood lik,
                      Rng& rng) {
  SideVae vae;
  vae.encoder = mlp_init(input_dim, {hidden}, 2 * latent_dim, rng);
  // Start the posterior noise well below the unit prior: wide posteriors at the
  // start drown whatever latent structure the warmup finds.
  vae.encoder.layers.back().bias.tail(latent_dim).setConstant(std::log(std::expm1(0.01)));
  vae.decoder = mlp_init(latent_dim, {hidden}, input_dim, rng);
  GaussianMixture init;
  init.weights = Vec::Constant(clusters, 1.0 / clusters);
  init.means.resize(clusters, latent_dim);
  for (int c = 0; c < clusters; ++c) {
    for (int d = 0; d < latent_dim; ++d) init.means(c, d) = 0.5 * rng.normal();
  }
  init.stds = Mat::Ones(clusters, latent_dim);
  vae.prior = GmmParams::from_mixture(init);
  vae.scale = Vec::Ones(latent_dim);
  vae.likelihood = lik;
  vae.validate();
  return vae;
}

PosteriorParams encode(const SideVae& vae, const Vec& x) {
  PosteriorParams p;
  Vec out = mlp_forward(vae.encoder, x, &p.enc_trace);
  const int L = vae.latent_dim();
  p.mean_raw = out.head(L);
  p.std_head = out.tail(L);
  p.std.resize(L);
  for (int d = 0; d < L; ++d) p.std[d] = softplus(p.std_head[d]) + 1e-6;
  p.mean = vae.scale.cwiseProduct(p.mean_raw);
  return p;
}

double reconstruction_log_likelihood(const Vec& x, const Vec& decoded, Likelihood lik,
                                     const Vec& mask) {
  if (x.size() != decoded.size()) throw DataError("reconstruction: size mismatch");
  if (mask.size() != 0 && mask.size() != x.size()) {
    throw DataError("reconstruction: mask size mismatch");
  }
  double ll = 0.0;
  for (int d = 0; d < x.size(); ++d) {
    if (mask.size() != 0 && mask[d] == 0.0) continue;
    if (lik == Likelihood::gaussian_unit_variance) {
      const double r = x[d] - decoded[d];
      ll += -0.5 * r * r - 0.5 * kLog2Pi;
    } else {
      // x log s(o) + (1-x) log(1-s(o)) without saturating
      ll += -(x[d] * softplus(-decoded[d]) + (1.0 - x[d]) * softplus(decoded[d]));
    }
  }
  return ll;
}

Vec reconstruction_ll_grad(const Vec& x, const Vec& decoded, Likelihood lik, const Vec& mask) {
  Vec g = Vec::Zero(x.size());
  for (int d = 0; d < x.size(); ++d) {
    if (mask.size() != 0 && mask[d] == 0.0) continue;
    if (lik == Likelihood::gaussian_unit_variance) {
      g[d] = x[d] - decoded[d];
    } else {
      g[d] = x[d] - sigmoid(decoded[d]);
    }
  }
  return g;
}

SideEval side_eval_with_noise(const SideVae& vae, const Vec& x, const Vec& mask,
                              const Mat& noise) {
  const int L = vae.latent_dim();
  const int K = static_cast<int>(noise.cols());
  if (noise.rows() != L || K < 1) throw DataError("side_eval: bad noise shape");

  SideEval ev;
  ev.post = encode(vae, x);
  const GaussianMixture prior = vae.prior.mixture();

  ev.samples.resize(K);
  ev.dec_traces.resize(K);
  ev.recon_grad_out.resize(K);
  ev.recon_grad_z.resize(K);
  ev.prior_grad_z.resize(K);
  Vec log_w(K);
  double recon = 0.0, kl = 0.0;
  for (int k = 0; k < K; ++k) {
    auto& s = ev.samples[k];
    s.epsilon = noise.col(k);
    Vec sigma_eps = ev.post.std.cwiseProduct(s.epsilon);
    s.z = ev.post.mean + sigma_eps;
    s.z_kl = ev.post.mean_raw + sigma_eps;

    Vec decoded = mlp_forward(vae.decoder, s.z, &ev.dec_traces[k]);
    s.log_lik = reconstruction_log_likelihood(x, decoded, vae.likelihood, mask);
    s.log_prior = gmm_log_density(prior, s.z_kl);
    s.log_q = 0.0;
    for (int d = 0; d < L; ++d) {
      s.log_q += -std::log(ev.post.std[d]) - 0.5 * s.epsilon[d] * s.epsilon[d] - 0.5 * kLog2Pi;
    }
    s.component = 0;
    if (prior.components() > 1) {
      Vec resp = gmm_responsibilities(prior, s.z_kl);
      resp.maxCoeff(&s.component);
    }

    ev.recon_grad_out[k] = reconstruction_ll_grad(x, decoded, vae.likelihood, mask);
    ev.recon_grad_z[k] = mlp_backward(vae.decoder, ev.dec_traces[k], ev.recon_grad_out[k]);
    ev.prior_grad_z[k] = gmm_log_density_grad_z(prior, s.z_kl);

    log_w[k] = s.log_weight();
    check_finite(log_w[k], "importance weight");
    recon += s.log_lik;
    kl += s.log_q - s.log_prior;
  }
  ev.weights = normalize_weights(log_w);
  ev.recon_term = recon / K;
  ev.kl_term = kl / K;
  return ev;
}

SideEval side_eval(const SideVae& vae, const Vec& x, const Vec& mask, int K, Rng& rng) {
  if (K < 1) throw DataError("side_eval: need at least one draw");
  Mat noise(vae.latent_dim(), K);
  for (int k = 0; k < K; ++k) noise.col(k) = rng.normal_vec(vae.latent_dim());
  return side_eval_with_noise(vae, x, mask, noise);
}

double negative_elbo(const SideVae& vae, const Vec& x, const Vec& mask, int K, Rng& rng,
                     SideEval* detail) {
  SideEval ev = side_eval(vae, x, mask, K, rng);
  const double loss = ev.negative_elbo();
  if (detail) *detail = std::move(ev);
  return loss;
}

SideGrads SideGrads::zeros_like(const SideVae& vae) {
  SideGrads g;
  g.enc = MlpGrads::zeros_like(vae.encoder);
  g.dec = MlpGrads::zeros_like(vae.decoder);
  g.prior = GmmGrads::zeros_like(vae.prior.mixture());
  return g;
}

void SideGrads::add_scaled(const SideGrads& other, double s) {
  enc.add_scaled(other.enc, s);
  dec.add_scaled(other.dec, s);
  prior.add_scaled(other.prior, s);
}

void SideGrads::setZero() {
  enc.setZero();
  dec.setZero();
  prior.setZero();
}

void side_sample_backward(const SideVae& vae, const SideEval& eval, int k, const Vec& d_z,
                          double coef, MlpGrads& enc_grads) {
  const int L = vae.latent_dim();
  const auto& s = eval.samples[k];
  Vec out_grad(2 * L);
  out_grad.head(L) = vae.scale.cwiseProduct(d_z);
  for (int d = 0; d < L; ++d) {
    out_grad[L + d] = d_z[d] * s.epsilon[d] * sigmoid(eval.post.std_head[d]);
  }
  mlp_backward(vae.encoder, eval.post.enc_trace, out_grad, &enc_grads, coef);
}

void update_scale(SideVae& vae, const Mat& inputs, double tau, double f_max) {
  if (inputs.rows() < 1) throw DataError("update_scale: empty batch");
  const int L = vae.latent_dim();
  Mat mu(inputs.rows(), L);
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    mu.row(i) = encode(vae, inputs.row(i).transpose()).mean_raw.transpose();
  }
  for (int d = 0; d < L; ++d) {
    const double mean = mu.col(d).mean();
    const double sd = std::sqrt((mu.col(d).array() - mean).square().mean());
    vae.scale[d] = std::clamp(tau / (sd + 1e-8), 1.0, f_max);
  }
}

Vec cluster_assign(const SideVae& vae, const Vec& x, bool sample, Rng* rng) {
  PosteriorParams p = encode(vae, x);
  Vec z = p.mean_raw;
  if (sample) {
    if (!rng) throw DataError("cluster_assign: sampling requires a random stream");
    z += p.std.cwiseProduct(rng->normal_vec(vae.latent_dim()));
  }
  return gmm_responsibilities(vae.prior.mixture(), z);
}

}  // namespace srvcc
