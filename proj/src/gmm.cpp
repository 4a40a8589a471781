#include "srvcc/gmm.hpp"

namespace srvcc {

void GaussianMixture::validate() const {
  if (means.rows() == 0 || means.cols() == 0) throw DataError("mixture has no components");
  if (weights.size() != means.rows() || stds.rows() != means.rows() ||
      stds.cols() != means.cols()) {
    throw DataError("mixture parameter shapes disagree");
  }
  if (!weights.allFinite() || !means.allFinite() || !stds.allFinite()) {
    throw NumericError("mixture has non-finite parameters");
  }
  if (std::abs(weights.sum() - 1.0) > 1e-12 || weights.minCoeff() < 0.0) {
    throw DataError("mixture weights are not a probability simplex");
  }
  if (stds.minCoeff() <= 0.0) throw DataError("mixture stds must be strictly positive");
}

GaussianMixture GaussianMixture::standard_normal(int dim) {
  GaussianMixture g;
  g.weights = Vec::Ones(1);
  g.means = Mat::Zero(1, dim);
  g.stds = Mat::Ones(1, dim);
  return g;
}

// log pi_c + sum_d log N(z_d; mean_cd, std_cd) for every component
static Vec component_log_joint(const GaussianMixture& gmm, const Vec& z) {
  const int K = gmm.components();
  Vec a(K);
  for (int c = 0; c < K; ++c) {
    double s = gmm.weights[c] > 0.0 ? std::log(gmm.weights[c])
                                    : -std::numeric_limits<double>::infinity();
    for (int d = 0; d < gmm.dim(); ++d) {
      s += log_normal_pdf(z[d], gmm.means(c, d), gmm.stds(c, d));
    }
    a[c] = s;
  }
  return a;
}

double gmm_log_density(const GaussianMixture& gmm, const Vec& z) {
  if (z.size() != gmm.dim()) throw DataError("gmm_log_density: dimension mismatch");
  return logsumexp(component_log_joint(gmm, z));
}

Vec gmm_responsibilities(const GaussianMixture& gmm, const Vec& z) {
  Vec a = component_log_joint(gmm, z);
  const double lse = logsumexp(a);
  Vec r(a.size());
  for (int c = 0; c < a.size(); ++c) r[c] = std::exp(a[c] - lse);
  r /= r.sum();
  return r;
}

MixtureSample gmm_sample(const GaussianMixture& gmm, Rng& rng) {
  MixtureSample s;
  s.component = rng.categorical(gmm.weights);
  s.epsilon = rng.normal_vec(gmm.dim());
  s.z = gmm.means.row(s.component).transpose() +
        (gmm.stds.row(s.component).transpose().array() * s.epsilon.array()).matrix();
  return s;
}

Vec gmm_inverse_reparam(const GaussianMixture& gmm, const Vec& z, int component) {
  if (component < 0 || component >= gmm.components()) {
    throw DataError("gmm_inverse_reparam: component out of range");
  }
  return ((z - gmm.means.row(component).transpose()).array() /
          gmm.stds.row(component).transpose().array())
      .matrix();
}

double gmm_data_log_likelihood(const GaussianMixture& gmm, const Mat& points) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    ll += gmm_log_density(gmm, points.row(i).transpose());
  }
  return ll;
}

GaussianMixture fit_em(const Mat& points, int components, Rng& rng, int max_iters, double tol,
                       double std_floor, std::vector<double>* log_likelihood_trace,
                       int* reseed_count) {
  if (reseed_count) *reseed_count = 0;
  const Eigen::Index N = points.rows();
  const int D = static_cast<int>(points.cols());
  if (N == 0) throw DataError("fit_em: no points");
  if (components < 1 || components > N) {
    throw DataError("fit_em: component count must lie in [1, n_points]");
  }
  check_finite(points, "fit_em points");

  Vec global_mean = points.colwise().mean().transpose();
  Vec global_var(D);
  for (int d = 0; d < D; ++d) {
    global_var[d] = (points.col(d).array() - global_mean[d]).square().mean();
  }
  Vec global_std = global_var.array().sqrt().max(std_floor).matrix();

  GaussianMixture gmm;
  gmm.weights = Vec::Constant(components, 1.0 / components);
  gmm.means.resize(components, D);
  gmm.stds.resize(components, D);
  for (int c = 0; c < components; ++c) gmm.stds.row(c) = global_std.transpose();

  // k-means++ style seeding
  {
    int first = rng.uniform_int(static_cast<int>(N));
    gmm.means.row(0) = points.row(first);
    Vec d2 = (points.rowwise() - points.row(first)).rowwise().squaredNorm();
    for (int c = 1; c < components; ++c) {
      int pick = d2.sum() > 0.0 ? rng.categorical(d2) : rng.uniform_int(static_cast<int>(N));
      gmm.means.row(c) = points.row(pick);
      Vec nd2 = (points.rowwise() - points.row(pick)).rowwise().squaredNorm();
      d2 = d2.cwiseMin(nd2);
    }
  }

  Mat resp(N, components);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    // E step
    double ll = 0.0;
    for (Eigen::Index i = 0; i < N; ++i) {
      Vec a = component_log_joint(gmm, points.row(i).transpose());
      const double lse = logsumexp(a);
      ll += lse;
      for (int c = 0; c < components; ++c) resp(i, c) = std::exp(a[c] - lse);
    }
    if (log_likelihood_trace) log_likelihood_trace->push_back(ll);

    // M step
    Vec nk = resp.colwise().sum().transpose();
    for (int c = 0; c < components; ++c) {
      if (nk[c] < 1e-10) {
        // dead component: reseed at the point farthest from all centres
        if (reseed_count) ++*reseed_count;
        Eigen::Index far = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < N; ++i) {
          double dmin = std::numeric_limits<double>::infinity();
          for (int c2 = 0; c2 < components; ++c2) {
            dmin = std::min(dmin, (points.row(i) - gmm.means.row(c2)).squaredNorm());
          }
          if (dmin > best) {
            best = dmin;
            far = i;
          }
        }
        gmm.means.row(c) = points.row(far);
        gmm.stds.row(c) = global_std.transpose();
        nk[c] = 1.0;
        continue;
      }
      gmm.means.row(c) = (resp.col(c).transpose() * points) / nk[c];
      for (int d = 0; d < D; ++d) {
        const double var =
            (resp.col(c).array() * (points.col(d).array() - gmm.means(c, d)).square()).sum() /
            nk[c];
        gmm.stds(c, d) = std::max(std::sqrt(var), std_floor);
      }
    }
    gmm.weights = nk / nk.sum();

    if (std::abs(ll - prev_ll) < tol * (1.0 + std::abs(ll))) break;
    prev_ll = ll;
  }
  gmm.validate();
  return gmm;
}

GmmGrads GmmGrads::zeros_like(const GaussianMixture& gmm) {
  GmmGrads g;
  g.d_logits = Vec::Zero(gmm.components());
  g.d_means = Mat::Zero(gmm.components(), gmm.dim());
  g.d_stds = Mat::Zero(gmm.components(), gmm.dim());
  return g;
}

void GmmGrads::add_scaled(const GmmGrads& other, double s) {
  d_logits += s * other.d_logits;
  d_means += s * other.d_means;
  d_stds += s * other.d_stds;
}

void GmmGrads::setZero() {
  d_logits.setZero();
  d_means.setZero();
  d_stds.setZero();
}

Vec gmm_log_density_grad_z(const GaussianMixture& gmm, const Vec& z) {
  const Vec gamma = gmm_responsibilities(gmm, z);
  Vec g = Vec::Zero(gmm.dim());
  for (int c = 0; c < gmm.components(); ++c) {
    g -= gamma[c] * ((z - gmm.means.row(c).transpose()).array() /
                     gmm.stds.row(c).transpose().array().square())
                        .matrix();
  }
  return g;
}

void gmm_log_density_param_grads(const GaussianMixture& gmm, const Vec& z, double coef,
                                 GmmGrads& grads) {
  const Vec gamma = gmm_responsibilities(gmm, z);
  // d log p / d logit_j = gamma_j - pi_j
  grads.d_logits += coef * (gamma - gmm.weights);
  for (int c = 0; c < gmm.components(); ++c) {
    const Arr diff = (z - gmm.means.row(c).transpose()).array();
    const Arr sd = gmm.stds.row(c).transpose().array();
    grads.d_means.row(c) += coef * gamma[c] * (diff / sd.square()).matrix().transpose();
    grads.d_stds.row(c) +=
        coef * gamma[c] * (diff.square() / sd.cube() - 1.0 / sd).matrix().transpose();
  }
}

Vec gmm_responsibilities_backward(const GaussianMixture& gmm, const Vec& z, const Vec& d_gamma,
                                  GmmGrads* grads) {
  const Vec gamma = gmm_responsibilities(gmm, z);
  // gamma = softmax(a), a_c = log pi_c + log N_c(z)
  const double dot = gamma.dot(d_gamma);
  Vec da(gmm.components());
  for (int c = 0; c < gmm.components(); ++c) da[c] = gamma[c] * (d_gamma[c] - dot);

  Vec dz = Vec::Zero(gmm.dim());
  const double da_sum = da.sum();
  for (int c = 0; c < gmm.components(); ++c) {
    const Arr diff = (z - gmm.means.row(c).transpose()).array();
    const Arr sd = gmm.stds.row(c).transpose().array();
    const Arr score = diff / sd.square();  // d a_c / d mean_c; d a_c / d z = -score
    dz -= da[c] * score.matrix();
    if (grads) {
      grads->d_means.row(c) += da[c] * score.matrix().transpose();
      grads->d_stds.row(c) += da[c] * (diff.square() / sd.cube() - 1.0 / sd).matrix().transpose();
    }
  }
  if (grads) grads->d_logits += da - da_sum * gmm.weights;
  return dz;
}

GaussianMixture GmmParams::mixture() const {
  GaussianMixture g;
  Vec shifted = logits.array() - logits.maxCoeff();
  g.weights = shifted.array().exp().matrix();
  g.weights /= g.weights.sum();
  g.means = means;
  g.stds.resize(std_raw.rows(), std_raw.cols());
  for (Eigen::Index c = 0; c < std_raw.rows(); ++c) {
    for (Eigen::Index d = 0; d < std_raw.cols(); ++d) {
      g.stds(c, d) = softplus(std_raw(c, d)) + std_floor;
    }
  }
  return g;
}

GmmParams GmmParams::from_mixture(const GaussianMixture& gmm, double std_floor) {
  gmm.validate();
  GmmParams p;
  p.std_floor = std_floor;
  p.logits = gmm.weights.array().max(1e-300).log().matrix();
  p.means = gmm.means;
  p.std_raw.resize(gmm.stds.rows(), gmm.stds.cols());
  for (Eigen::Index c = 0; c < gmm.stds.rows(); ++c) {
    for (Eigen::Index d = 0; d < gmm.stds.cols(); ++d) {
      p.std_raw(c, d) = softplus_inv(std::max(gmm.stds(c, d) - std_floor, 1e-10));
    }
  }
  return p;
}

Vec GmmParams::pack() const {
  Vec flat(param_count());
  flat.head(logits.size()) = logits;
  Eigen::Index at = logits.size();
  flat.segment(at, means.size()) = Eigen::Map<const Vec>(means.data(), means.size());
  at += means.size();
  flat.segment(at, std_raw.size()) = Eigen::Map<const Vec>(std_raw.data(), std_raw.size());
  return flat;
}

void GmmParams::unpack(const Vec& flat) {
  if (flat.size() != param_count()) throw DataError("gmm unpack: size mismatch");
  logits = flat.head(logits.size());
  Eigen::Index at = logits.size();
  Eigen::Map<Vec>(means.data(), means.size()) = flat.segment(at, means.size());
  at += means.size();
  Eigen::Map<Vec>(std_raw.data(), std_raw.size()) = flat.segment(at, std_raw.size());
}

Vec GmmParams::chain(const GmmGrads& grads) const {
  Vec flat(param_count());
  flat.head(logits.size()) = grads.d_logits;
  Eigen::Index at = logits.size();
  flat.segment(at, means.size()) = Eigen::Map<const Vec>(grads.d_means.data(), grads.d_means.size());
  at += means.size();
  Mat d_raw = grads.d_stds;
  for (Eigen::Index c = 0; c < std_raw.rows(); ++c) {
    for (Eigen::Index d = 0; d < std_raw.cols(); ++d) {
      d_raw(c, d) *= sigmoid(std_raw(c, d));
    }
  }
  flat.segment(at, d_raw.size()) = Eigen::Map<const Vec>(d_raw.data(), d_raw.size());
  return flat;
}

}  // namespace srvcc
