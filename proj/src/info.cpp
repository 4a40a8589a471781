#include "srvcc/info.hpp"

namespace srvcc {

namespace {

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

}  // namespace

int InfoNceCritic::param_count() const {
  return kind == CriticKind::bilinear ? static_cast<int>(projection.size()) : net.param_count();
}

Vec InfoNceCritic::pack() const {
  if (kind == CriticKind::bilinear) {
    return Eigen::Map<const Vec>(projection.data(), projection.size());
  }
  return net.pack();
}

void InfoNceCritic::unpack(const Vec& flat) {
  if (kind == CriticKind::bilinear) {
    if (flat.size() != projection.size()) throw DataError("critic: packed size mismatch");
    projection = Eigen::Map<const Mat>(flat.data(), projection.rows(), projection.cols());
    return;
  }
  net.unpack(flat);
}

void InfoNceCritic::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw DataError("critic: temperature must be positive");
  }
  if (kind == CriticKind::bilinear) {
    if (projection.size() == 0) throw DataError("critic: empty projection");
    check_finite(projection, "critic projection");
  } else {
    net.validate();
    if (net.output_dim() != 1) throw DataError("critic: network must emit one score");
  }
}

InfoNceCritic make_bilinear_critic(int input_dim, int latent_dim, Rng& rng, double temperature) {
  InfoNceCritic c;
  c.kind = CriticKind::bilinear;
  c.temperature = temperature;
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  c.projection.resize(latent_dim, input_dim);
  for (int r = 0; r < latent_dim; ++r) {
    for (int col = 0; col < input_dim; ++col) {
      c.projection(r, col) = (2.0 * rng.uniform() - 1.0) * bound;
    }
  }
  return c;
}

InfoNceCritic make_mlp_critic(int input_dim, int latent_dim, int hidden, Rng& rng,
                              double temperature) {
  InfoNceCritic c;
  c.kind = CriticKind::mlp;
  c.temperature = temperature;
  c.net = mlp_init(input_dim + latent_dim, {hidden}, 1, rng);
  return c;
}

double critic_score(const InfoNceCritic& critic, const Vec& x, const Vec& z) {
  if (critic.kind == CriticKind::bilinear) {
    return z.dot(critic.projection * x);
  }
  return mlp_forward(critic.net, concat(x, z))[0];
}

namespace {

// tempered score matrix S(j, i) = h(x_j, z_i) / T
Mat score_matrix(const InfoNceCritic& critic, const Mat& xs, const Mat& zs) {
  const int B = static_cast<int>(xs.rows());
  Mat s(B, B);
  if (critic.kind == CriticKind::bilinear) {
    s = (xs * critic.projection.transpose()) * zs.transpose();  // (j, i)
  } else {
    for (int j = 0; j < B; ++j) {
      for (int i = 0; i < B; ++i) {
        s(j, i) =
            mlp_forward(critic.net, concat(xs.row(j).transpose(), zs.row(i).transpose()))[0];
      }
    }
  }
  return s / critic.temperature;
}

double nce_from_scores(const Mat& s) {
  const int B = static_cast<int>(s.rows());
  double c = 0.0;
  for (int i = 0; i < B; ++i) {
    c += s(i, i) - logsumexp(s.col(i));
  }
  return std::min(c, 0.0);
}

// dc/dS(j, i) = [j == i] - softmax_j(S(., i))
Mat nce_score_grad(const Mat& s) {
  const int B = static_cast<int>(s.rows());
  Mat g(B, B);
  for (int i = 0; i < B; ++i) {
    const double lse = logsumexp(s.col(i));
    for (int j = 0; j < B; ++j) g(j, i) = -std::exp(s(j, i) - lse);
    g(i, i) += 1.0;
  }
  return g;
}

}  // namespace

double info_nce(const InfoNceCritic& critic, const Mat& xs, const Mat& zs) {
  if (xs.rows() < 2) throw DataError("contrastive bound needs at least two pairs");
  if (xs.rows() != zs.rows()) throw DataError("contrastive bound: unpaired batch");
  return nce_from_scores(score_matrix(critic, xs, zs));
}

CriticGrads CriticGrads::zeros_like(const InfoNceCritic& critic) {
  CriticGrads g;
  if (critic.kind == CriticKind::bilinear) {
    g.projection = Mat::Zero(critic.projection.rows(), critic.projection.cols());
  } else {
    g.net = MlpGrads::zeros_like(critic.net);
  }
  return g;
}

void CriticGrads::setZero() {
  if (projection.size() > 0) projection.setZero();
  net.setZero();
}

Vec CriticGrads::pack() const {
  if (projection.size() > 0) {
    return Eigen::Map<const Vec>(projection.data(), projection.size());
  }
  return net.pack();
}

double info_nce_backward(const InfoNceCritic& critic, const Mat& xs, const Mat& zs, double coef,
                         CriticGrads* grads, Mat* d_zs) {
  if (xs.rows() < 2) throw DataError("contrastive bound needs at least two pairs");
  if (xs.rows() != zs.rows()) throw DataError("contrastive bound: unpaired batch");
  const int B = static_cast<int>(xs.rows());
  const Mat s = score_matrix(critic, xs, zs);
  const double value = nce_from_scores(s);
  const Mat g = nce_score_grad(s) * (coef / critic.temperature);  // dc/dh(j,i), scaled

  if (d_zs) *d_zs = Mat::Zero(zs.rows(), zs.cols());

  if (critic.kind == CriticKind::bilinear) {
    if (grads) grads->projection += zs.transpose() * (g.transpose() * xs);
    if (d_zs) *d_zs += (g.transpose() * xs) * critic.projection.transpose();
    return value;
  }

  // mlp critic: one backward per pair, traces recomputed to bound memory
  const int L = static_cast<int>(zs.cols());
  for (int j = 0; j < B; ++j) {
    for (int i = 0; i < B; ++i) {
      if (g(j, i) == 0.0) continue;
      MlpTrace trace;
      mlp_forward(critic.net, concat(xs.row(j).transpose(), zs.row(i).transpose()), &trace);
      Vec out_grad = Vec::Constant(1, g(j, i));
      Vec in_grad = mlp_backward(critic.net, trace, out_grad, grads ? &grads->net : nullptr);
      if (d_zs) d_zs->row(i) += in_grad.tail(L).transpose();
    }
  }
  return value;
}

void JointPmf::validate() const {
  if (table.size() == 0) throw DataError("empty co-cluster table");
  if ((table.array() < -1e-15).any()) throw DataError("co-cluster table has negative mass");
  if (std::abs(table.sum() - 1.0) > 1e-12) throw DataError("co-cluster table does not sum to one");
  if ((row_marginal - table.rowwise().sum()).lpNorm<Eigen::Infinity>() > 1e-12 ||
      (col_marginal - table.colwise().sum().transpose()).lpNorm<Eigen::Infinity>() > 1e-12) {
    throw DataError("co-cluster marginals inconsistent with the table");
  }
}

Mat matrix_to_pmf(const Mat& x, const MaskMat* mask) {
  if (x.size() == 0) throw DataError("cannot normalize an empty matrix");
  check_finite(x, "data matrix");
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw DataError("mask shape does not match the matrix");
  }
  double lo = std::numeric_limits<double>::infinity();
  bool any = false;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask && (*mask)(i, j) == 0) continue;
      lo = std::min(lo, x(i, j));
      any = true;
    }
  }
  if (!any) throw DataError("matrix has no observed cells");

  Mat shifted(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const bool observed = !mask || (*mask)(i, j) != 0;
      shifted(i, j) = observed ? x(i, j) - lo : 0.0;
    }
  }
  const double total = shifted.sum();
  if (total <= 0.0) {
    // flat data: every observed cell equally likely
    double count = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (!mask || (*mask)(i, j) != 0) count += 1.0;
      }
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) {
        shifted(i, j) = (!mask || (*mask)(i, j) != 0) ? 1.0 / count : 0.0;
      }
    }
    return shifted;
  }
  return shifted / total;
}

double pmf_mutual_information(const Mat& pmf) {
  const Vec pr = pmf.rowwise().sum();
  const Vec pc = pmf.colwise().sum().transpose();
  double info = 0.0;
  for (Eigen::Index i = 0; i < pmf.rows(); ++i) {
    for (Eigen::Index j = 0; j < pmf.cols(); ++j) {
      const double p = pmf(i, j);
      if (p <= 0.0) continue;  // 0 log 0 = 0
      info += p * std::log(p / (pr[i] * pc[j]));
    }
  }
  return info;
}

double empirical_mutual_information(const Mat& x, const MaskMat* mask) {
  return pmf_mutual_information(matrix_to_pmf(x, mask));
}

namespace {

void check_memberships(const Mat& gamma, Eigen::Index expected_rows, const char* what) {
  if (gamma.rows() != expected_rows) throw DataError(std::string(what) + ": wrong row count");
  for (Eigen::Index i = 0; i < gamma.rows(); ++i) {
    if ((gamma.row(i).array() < -1e-12).any() || std::abs(gamma.row(i).sum() - 1.0) > 1e-9) {
      throw DataError(std::string(what) + ": membership row " + std::to_string(i) +
                      " is not a probability vector");
    }
  }
}

}  // namespace

JointPmf coclustered_pmf(const Mat& gamma_r, const Mat& gamma_c, const Mat& base) {
  check_memberships(gamma_r, base.rows(), "row memberships");
  check_memberships(gamma_c, base.cols(), "column memberships");
  JointPmf pmf;
  pmf.table = gamma_r.transpose() * base * gamma_c;
  pmf.row_marginal = pmf.table.rowwise().sum();
  pmf.col_marginal = pmf.table.colwise().sum().transpose();
  return pmf;
}

double coclustered_mutual_information(const Mat& gamma_r, const Mat& gamma_c, const Mat& base,
                                      JointPmf* out) {
  JointPmf pmf = coclustered_pmf(gamma_r, gamma_c, base);
  const double info = pmf_mutual_information(pmf.table);
  if (out) *out = std::move(pmf);
  return info;
}

namespace {

// dI/dP_st, with vanished cells pinned to zero so 0 * (-inf) never surfaces
Mat mi_table_grad(const Mat& table) {
  const Vec pr = table.rowwise().sum();
  const Vec pc = table.colwise().sum().transpose();
  Mat g = Mat::Zero(table.rows(), table.cols());
  for (Eigen::Index s = 0; s < table.rows(); ++s) {
    for (Eigen::Index t = 0; t < table.cols(); ++t) {
      const double p = table(s, t);
      if (p <= 1e-300) continue;
      g(s, t) = std::log(p / (pr[s] * pc[t])) - 1.0;
    }
  }
  return g;
}

}  // namespace

void coclustered_mi_backward(const Mat& gamma_r, const Mat& gamma_c, const Mat& base, double coef,
                             Mat& d_gamma_r, Mat& d_gamma_c) {
  const JointPmf pmf = coclustered_pmf(gamma_r, gamma_c, base);
  const Mat l = mi_table_grad(pmf.table);
  d_gamma_r = coef * base * gamma_c * l.transpose();
  d_gamma_c = coef * base.transpose() * gamma_r * l;
}

double cross_loss(double i_hat, double i_orig) {
  if (i_orig <= kMiEpsilon) {
    throw DataError("cross loss: original mutual information is degenerate");
  }
  if (i_hat > i_orig + 1e-9) {
    throw NumericError("cross loss: coarsened mutual information exceeds the original");
  }
  return std::clamp(1.0 - i_hat / i_orig, 0.0, 1.0);
}

CrossLossGrads cross_loss_gradients(const Mat& base_pmf, const GaussianMixture& prior_r,
                                    const GaussianMixture& prior_c, const Mat& mu_r,
                                    const Mat& mu_c, double coef) {
  const Eigen::Index n = base_pmf.rows();
  const Eigen::Index d = base_pmf.cols();
  if (mu_r.rows() != n || mu_c.rows() != d) {
    throw DataError("cross loss: posterior means do not match the matrix shape");
  }

  Mat gamma_r(n, prior_r.components()), gamma_c(d, prior_c.components());
  for (Eigen::Index i = 0; i < n; ++i) {
    gamma_r.row(i) = gmm_responsibilities(prior_r, mu_r.row(i).transpose()).transpose();
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    gamma_c.row(j) = gmm_responsibilities(prior_c, mu_c.row(j).transpose()).transpose();
  }

  CrossLossGrads out;
  out.i_orig = pmf_mutual_information(base_pmf);
  out.i_hat = coclustered_mutual_information(gamma_r, gamma_c, base_pmf);
  out.value = cross_loss(out.i_hat, out.i_orig);

  // dJ3/dI_hat = -1/I_orig; zero once the clamp is active
  double scale = -coef / out.i_orig;
  if (1.0 - out.i_hat / out.i_orig < 0.0) scale = 0.0;

  Mat d_gamma_r, d_gamma_c;
  coclustered_mi_backward(gamma_r, gamma_c, base_pmf, scale, d_gamma_r, d_gamma_c);

  out.d_mu_r = Mat::Zero(n, mu_r.cols());
  out.d_mu_c = Mat::Zero(d, mu_c.cols());
  out.prior_r = GmmGrads::zeros_like(prior_r);
  out.prior_c = GmmGrads::zeros_like(prior_c);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.d_mu_r.row(i) = gmm_responsibilities_backward(prior_r, mu_r.row(i).transpose(),
                                                      d_gamma_r.row(i).transpose(), &out.prior_r)
                            .transpose();
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    out.d_mu_c.row(j) = gmm_responsibilities_backward(prior_c, mu_c.row(j).transpose(),
                                                      d_gamma_c.row(j).transpose(), &out.prior_c)
                            .transpose();
  }
  return out;
}

}  // namespace srvcc
