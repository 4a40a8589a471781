#include "srvcc/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <utility>

namespace srvcc {

TrainMode mode_from_string(const std::string& name) {
  if (name == "two_stage") return TrainMode::two_stage;
  if (name == "simple_cascade") return TrainMode::simple_cascade;
  if (name == "feature_only") return TrainMode::feature_only;
  throw DataError("unknown training mode: " + name);
}

std::string mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::two_stage: return "two_stage";
    case TrainMode::simple_cascade: return "simple_cascade";
    case TrainMode::feature_only: return "feature_only";
  }
  throw DataError("unknown training mode value");
}

MiBase mi_base_from_string(const std::string& name) {
  if (name == "data") return MiBase::data;
  if (name == "uniform") return MiBase::uniform;
  throw DataError("unknown cross-information base: " + name);
}

std::string mi_base_name(MiBase base) {
  return base == MiBase::data ? "data" : "uniform";
}

void TrainConfig::validate(Eigen::Index n, Eigen::Index d) const {
  auto bad = [](const std::string& msg) { throw DataError("config: " + msg); };
  if (g < 1 || m < 1) bad("cluster counts must be at least 1");
  if (n > 0 && g > n) bad("more row clusters than rows");
  if (d > 0 && m > d) bad("more column clusters than columns");
  if (M < 0) bad("joint component count must be nonnegative");
  if (row_latent < 1 || col_latent < 1 || joint_latent < 1) {
    bad("latent dimensions must be positive");
  }
  if (hidden < 1) bad("hidden width must be positive");
  for (double l : {lambda1, lambda2, lambda3, lambda4, lambda5, lambda6, lambda7, lambda8,
                   lambda9}) {
    if (!std::isfinite(l) || l < 0.0) bad("objective weights must be finite and nonnegative");
  }
  if (K < 1) bad("importance draws must be positive");
  if (row_batch < 1 || col_batch < 1 || cell_batch < 1) bad("batch sizes must be positive");
  if (cell_batches_per_epoch < 0) bad("cell batch budget must be nonnegative");
  if (!(adam.lr > 0.0)) bad("learning rate must be positive");
  if (max_epochs < 0 || pretrain_epochs < 0) bad("epoch counts must be nonnegative");
  if (!(tau > 0.0)) bad("tau must be positive");
  if (!(f_max >= 1.0)) bad("scale cap must be at least 1");
  if (mi_rows < 2 || mi_cols < 2) bad("cross-information subsample needs at least 2 per side");
  if (!(holdout >= 0.0 && holdout < 1.0)) bad("holdout fraction must be in [0, 1)");
  if (threads < 1) bad("thread count must be positive");
  if (result_cells < 0) bad("result cell sample must be nonnegative");
  if (!(critic_temperature > 0.0)) bad("critic temperature must be positive");
}

double LossBreakdown::recombine(const TrainConfig& cfg) const {
  return cfg.lambda1 * row_reg + cfg.lambda2 * row_loss + cfg.lambda3 * row_contrast +
         cfg.lambda4 * col_reg + cfg.lambda5 * col_loss + cfg.lambda6 * col_contrast +
         cfg.lambda7 * joint_loss + cfg.lambda8 * joint_contrast + cfg.lambda9 * mi_loss;
}

namespace {

// Index-parallel loop; every iteration must be independent and own its state.
// Results land in pre-sized slots, so the outcome is identical at any thread
// count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_lock;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_lock);
          if (!failure) failure = std::current_exception();
          next.store(n);
          break;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  return order;
}

std::vector<std::int64_t> shuffled_cells(std::int64_t total, Rng& rng) {
  std::vector<std::int64_t> order(total);
  std::iota(order.begin(), order.end(), std::int64_t{0});
  rng.shuffle(order);
  return order;
}

Vec side_item(const DataMatrix& m, bool rows_side, int index) {
  return rows_side ? matrix_row(m, index) : matrix_col(m, index);
}

Vec side_item_mask(const DataMatrix& m, bool rows_side, int index) {
  return rows_side ? row_mask(m, index) : col_mask(m, index);
}

Mat side_inputs(const DataMatrix& m, bool rows_side) {
  const int n = static_cast<int>(rows_side ? m.rows() : m.cols());
  Mat items(n, rows_side ? m.cols() : m.rows());
  for (int i = 0; i < n; ++i) items.row(i) = side_item(m, rows_side, i).transpose();
  return items;
}

double network_sq_norm(const SideVae& vae) {
  return vae.encoder.pack().squaredNorm() + vae.decoder.pack().squaredNorm();
}

void adam_step_gmm(GmmParams& prior, const GmmGrads& grads, AdamState& state,
                   const AdamConfig& cfg) {
  Vec flat = prior.pack();
  adam_step(flat, prior.chain(grads), state, cfg);
  prior.unpack(flat);
}

void adam_step_critic(InfoNceCritic& critic, const CriticGrads& grads, AdamState& state,
                      const AdamConfig& cfg) {
  Vec flat = critic.pack();
  adam_step(flat, grads.pack(), state, cfg);
  critic.unpack(flat);
}

// Deterministic decoder pass at the scaled posterior mean; the Bernoulli head
// is squashed so the output lives on the observation scale.
Vec side_predict(const SideVae& vae, const Vec& x) {
  const PosteriorParams post = encode(vae, x);
  Vec out = mlp_forward(vae.decoder, post.mean);
  if (vae.likelihood == Likelihood::bernoulli) {
    out = out.unaryExpr([](double v) { return sigmoid(v); });
  }
  return out;
}

// One sampled latent for the joint pass, kept with enough context to chain
// gradients back into the encoder heads.
struct LatentDraw {
  PosteriorParams post;
  Vec eps;
  Vec z;  // scaled mean + std .* eps
};

LatentDraw draw_latent(const SideVae& vae, const Vec& x, Rng& rng) {
  LatentDraw d;
  d.post = encode(vae, x);
  d.eps = rng.normal_vec(vae.latent_dim());
  d.z = d.post.mean + (d.post.std.array() * d.eps.array()).matrix().eval();
  return d;
}

void latent_backward(const SideVae& vae, const LatentDraw& draw, const Vec& d_z,
                     MlpGrads& enc_grads) {
  const int L = vae.latent_dim();
  Vec out_grad(2 * L);
  out_grad.head(L) = (d_z.array() * vae.scale.array()).matrix();
  for (int t = 0; t < L; ++t) {
    out_grad[L + t] = d_z[t] * draw.eps[t] * sigmoid(draw.post.std_head[t]);
  }
  mlp_backward(vae.encoder, draw.post.enc_trace, out_grad, &enc_grads);
}

struct PhaseTotals {
  double loss_sum = 0.0;
  long loss_items = 0;
  double contrast_sum = 0.0;
  long contrast_items = 0;

  double loss_mean() const { return loss_items > 0 ? loss_sum / loss_items : 0.0; }
  double contrast_mean() const {
    return contrast_items > 0 ? contrast_sum / contrast_items : 0.0;
  }
};

// Mini-batch pass over one side: importance-weighted bound, contrastive term,
// weight decay, one optimizer step per batch per parameter group.
AdamConfig prior_adam(const TrainConfig& cfg) {
  AdamConfig a = cfg.adam;
  a.lr *= cfg.prior_lr_scale;
  return a;
}

PhaseTotals side_phase(SideVae& vae, InfoNceCritic& critic, const DataMatrix& matrix,
                       bool rows_side, double reg_lambda, double bound_lambda,
                       double contrast_lambda, const TrainConfig& cfg, AdamState& enc_state,
                       AdamState& dec_state, AdamState& prior_state, AdamState& critic_state,
                       Rng& epoch_rng, std::uint64_t tag_base) {
  PhaseTotals totals;
  const int n_items = static_cast<int>(rows_side ? matrix.rows() : matrix.cols());
  const int batch_size = rows_side ? cfg.row_batch : cfg.col_batch;
  const EstimatorMode mode = cfg.dreg ? EstimatorMode::iw_dreg : EstimatorMode::iw_naive;
  const std::vector<int> order = shuffled_indices(n_items, epoch_rng);

  for (int start = 0; start < n_items; start += batch_size) {
    const int B = std::min(batch_size, n_items - start);
    std::vector<Rng> rngs(B, Rng(0));
    std::vector<SideEval> evals(B);
    std::vector<Vec> inputs(B);
    for (int p = 0; p < B; ++p) {
      rngs[p] = epoch_rng.split(tag_base + static_cast<std::uint64_t>(order[start + p]));
    }
    parallel_for(B, cfg.threads, [&](int p) {
      const int idx = order[start + p];
      inputs[p] = side_item(matrix, rows_side, idx);
      evals[p] = side_eval(vae, inputs[p], side_item_mask(matrix, rows_side, idx), cfg.K, rngs[p]);
    });

    SideGrads grads = SideGrads::zeros_like(vae);
    for (int p = 0; p < B; ++p) {
      side_elbo_backward(vae, evals[p], mode, bound_lambda / B, grads,
                         cfg.gdreg_sampled_component, &rngs[p]);
      totals.loss_sum += evals[p].iw_loss();
    }
    totals.loss_items += B;

    bool contrastive = contrast_lambda != 0.0 && B >= 2;
    CriticGrads critic_grads;
    if (contrastive) {
      Mat xs(B, vae.input_dim()), zs(B, vae.latent_dim());
      for (int p = 0; p < B; ++p) {
        xs.row(p) = inputs[p].transpose();
        zs.row(p) = evals[p].samples[0].z.transpose();
      }
      critic_grads = CriticGrads::zeros_like(critic);
      Mat d_zs;
      const double c = info_nce_backward(critic, xs, zs, -contrast_lambda / B, &critic_grads,
                                         &d_zs);
      for (int p = 0; p < B; ++p) {
        side_sample_backward(vae, evals[p], 0, d_zs.row(p).transpose(), 1.0, grads.enc);
      }
      totals.contrast_sum += -c;
      totals.contrast_items += B;
    }

    if (reg_lambda != 0.0) {
      grads.enc.add_weight_decay(vae.encoder, reg_lambda);
      grads.dec.add_weight_decay(vae.decoder, reg_lambda);
    }
    adam_step(vae.encoder, grads.enc, enc_state, cfg.adam);
    adam_step(vae.decoder, grads.dec, dec_state, cfg.adam);
    adam_step_gmm(vae.prior, grads.prior, prior_state, prior_adam(cfg));
    if (contrastive) adam_step_critic(critic, critic_grads, critic_state, cfg.adam);
  }
  return totals;
}

// Uniform mass over the observed cells; the degenerate analogue of the
// data-derived base table.
Mat uniform_pmf(const MaskMat& mask) {
  std::int64_t observed = 0;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) observed += mask(i, j) != 0 ? 1 : 0;
  }
  if (observed == 0) throw DataError("no observed cells in the cross-information subsample");
  Mat pmf = Mat::Zero(mask.rows(), mask.cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    for (Eigen::Index j = 0; j < mask.cols(); ++j) {
      if (mask(i, j) != 0) pmf(i, j) = 1.0 / static_cast<double>(observed);
    }
  }
  return pmf;
}

std::vector<int> subsample_indices(int n, int want, Rng& rng) {
  std::vector<int> order = shuffled_indices(n, rng);
  if (want < n) order.resize(want);
  std::sort(order.begin(), order.end());
  return order;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Models init_models(Eigen::Index n, Eigen::Index d, const TrainConfig& cfg, Rng& rng) {
  cfg.validate(n, d);
  Models ms;
  ms.row = make_side_vae(static_cast<int>(d), cfg.row_latent, cfg.g, cfg.hidden,
                         cfg.row_likelihood, rng);
  ms.col = make_side_vae(static_cast<int>(n), cfg.col_latent, cfg.m, cfg.hidden,
                         cfg.col_likelihood, rng);
  ms.joint = make_joint_vae(cfg.row_latent, cfg.col_latent, cfg.joint_latent,
                            cfg.joint_components(), cfg.hidden, cfg.joint_likelihood, rng);
  ms.row_critic = make_bilinear_critic(static_cast<int>(d), cfg.row_latent, rng,
                                       cfg.critic_temperature);
  ms.col_critic = make_bilinear_critic(static_cast<int>(n), cfg.col_latent, rng,
                                       cfg.critic_temperature);
  ms.joint_critic = make_bilinear_critic(1, cfg.joint_latent, rng, cfg.critic_temperature);
  return ms;
}

TrainerState init_trainer_state(const Models& models, const TrainConfig& cfg) {
  TrainerState st;
  st.row_enc = AdamState(models.row.encoder.param_count());
  st.row_dec = AdamState(models.row.decoder.param_count());
  st.row_prior = AdamState(models.row.prior.param_count());
  st.row_critic_state = AdamState(models.row_critic.param_count());
  st.col_enc = AdamState(models.col.encoder.param_count());
  st.col_dec = AdamState(models.col.decoder.param_count());
  st.col_prior = AdamState(models.col.prior.param_count());
  st.col_critic_state = AdamState(models.col_critic.param_count());
  st.joint_enc = AdamState(models.joint.encoder.param_count());
  st.joint_dec = AdamState(models.joint.decoder.param_count());
  st.joint_prior = AdamState(models.joint.prior.param_count());
  st.joint_critic_state = AdamState(models.joint_critic.param_count());
  st.rng = Rng(cfg.seed);
  return st;
}

namespace {

// Variance fraction used when widening freshly fit mixture components by the
// posterior scatter; see the seeding comment below.
constexpr double kSeedWidening = 0.25;

// Autoencoding warmup under a frozen standard-normal prior, then the mixture
// prior is fit to the resulting posterior means.  The scale vector stays at
// one throughout: amplifying the means during warmup lets the divergence term
// squash the latent spread while the scale hides it from the reconstruction,
// leaving clusters too close together for the mixture to separate later.
void pretrain_side(SideVae& vae, const DataMatrix& matrix, bool rows_side, const TrainConfig& cfg,
                   Rng rng, std::vector<double>& losses, int* reseeds) {
  const int n_items = static_cast<int>(rows_side ? matrix.rows() : matrix.cols());
  const int batch_size = rows_side ? cfg.row_batch : cfg.col_batch;
  const int clusters = vae.prior.components();
  vae.prior = GmmParams::from_mixture(GaussianMixture::standard_normal(vae.latent_dim()));

  AdamState enc_state(vae.encoder.param_count());
  AdamState dec_state(vae.decoder.param_count());
  for (int e = 0; e < cfg.pretrain_epochs; ++e) {
    const std::vector<int> order = shuffled_indices(n_items, rng);
    double loss_sum = 0.0;
    for (int start = 0; start < n_items; start += batch_size) {
      const int B = std::min(batch_size, n_items - start);
      std::vector<Rng> rngs(B, Rng(0));
      std::vector<SideEval> evals(B);
      for (int p = 0; p < B; ++p) {
        const std::uint64_t tag = static_cast<std::uint64_t>(e + 1) * n_items + order[start + p];
        rngs[p] = rng.split(tag);
      }
      parallel_for(B, cfg.threads, [&](int p) {
        const int idx = order[start + p];
        evals[p] = side_eval(vae, side_item(matrix, rows_side, idx),
                             side_item_mask(matrix, rows_side, idx), 1, rngs[p]);
      });
      SideGrads grads = SideGrads::zeros_like(vae);
      for (int p = 0; p < B; ++p) {
        side_elbo_backward(vae, evals[p], EstimatorMode::elbo_mean, 1.0 / B, grads);
        loss_sum += evals[p].negative_elbo();
      }
      adam_step(vae.encoder, grads.enc, enc_state, cfg.adam);
      adam_step(vae.decoder, grads.dec, dec_state, cfg.adam);
    }
    losses.push_back(loss_sum / n_items);
  }

  // The mixture is fit to the posterior means, then each component's stds are
  // widened by a fraction of the mean posterior variance.  The widening keeps
  // the first epochs from blowing up — the divergence term evaluates the prior
  // at mean + std * eps draws, so components must roughly cover that scatter —
  // while the fraction keeps the components tighter than the posteriors, so
  // the posteriors shrink toward the components instead of smearing across
  // neighbouring ones and dragging their means together.
  const int L = vae.latent_dim();
  Mat mu(n_items, L);
  Mat sig_sq(n_items, L);
  parallel_for(n_items, cfg.threads, [&](int i) {
    const PosteriorParams post = encode(vae, side_item(matrix, rows_side, i));
    mu.row(i) = post.mean_raw.transpose();
    sig_sq.row(i) = post.std.array().square().matrix().transpose();
  });
  GaussianMixture em = fit_em(mu, clusters, rng, 200, 1e-8, 1e-4, nullptr, reseeds);
  const Vec noise_var = kSeedWidening * sig_sq.colwise().mean().transpose();
  for (int k = 0; k < em.components(); ++k) {
    for (int t = 0; t < L; ++t) {
      em.stds(k, t) = std::sqrt(em.stds(k, t) * em.stds(k, t) + noise_var[t]);
    }
  }
  vae.prior = GmmParams::from_mixture(em);
}

// The warmup decoder is fit to unscaled means, whose spread is small enough
// that its first layer acts linearly.  Folding a scale change into those input
// weights keeps the decoder computing the same function of the means, so the
// first scaled epochs refine the warmed geometry instead of fighting a decoder
// whose inputs grew by an order of magnitude overnight.
void absorb_scale_change(SideVae& vae, const Vec& prev_scale) {
  Mat& w = vae.decoder.layers.front().weight;
  for (int d = 0; d < vae.latent_dim(); ++d) {
    w.col(d) *= prev_scale[d] / vae.scale[d];
  }
}

// The joint pathway gets the same warmup as the sides: cell batches against a
// frozen standard-normal prior before its mixture is fit.  Side parameters
// stay frozen here — a fresh joint network pushes large, directionless
// gradients through the scale-amplified mean pathway, and one epoch of that
// is enough to fold distinct side clusters into a shared basin.
void pretrain_joint(Models& models, const DataMatrix& matrix, const TrainConfig& cfg, Rng rng,
                    std::vector<double>& losses) {
  models.joint.prior =
      GmmParams::from_mixture(GaussianMixture::standard_normal(models.joint.latent_dim()));
  AdamState enc_state(models.joint.encoder.param_count());
  AdamState dec_state(models.joint.decoder.param_count());
  const int d = static_cast<int>(matrix.cols());
  const std::int64_t total_cells = static_cast<std::int64_t>(matrix.rows()) * d;
  const std::int64_t limit =
      cfg.cell_batches_per_epoch > 0
          ? std::min<std::int64_t>(total_cells, static_cast<std::int64_t>(
                                                    cfg.cell_batches_per_epoch) * cfg.cell_batch)
          : total_cells;
  for (int e = 0; e < cfg.pretrain_epochs; ++e) {
    std::vector<std::int64_t> order = shuffled_cells(total_cells, rng);
    double loss_sum = 0.0;
    std::int64_t loss_items = 0;
    for (std::int64_t start = 0; start < limit; start += cfg.cell_batch) {
      const int B = static_cast<int>(std::min<std::int64_t>(cfg.cell_batch, limit - start));
      std::vector<Rng> rngs(B, Rng(0));
      std::vector<LatentDraw> draws_r(B), draws_c(B);
      std::vector<JointEval> evals(B);
      std::vector<Cell> cells(B);
      for (int p = 0; p < B; ++p) {
        const std::int64_t lin = order[start + p];
        rngs[p] = rng.split(static_cast<std::uint64_t>(e + 1) * total_cells + lin);
        cells[p] = Cell{static_cast<int>(lin / d), static_cast<int>(lin % d),
                        matrix.values(lin / d, lin % d), matrix.mask(lin / d, lin % d) != 0};
      }
      parallel_for(B, cfg.threads, [&](int p) {
        draws_r[p] = draw_latent(models.row, matrix_row(matrix, cells[p].row), rngs[p]);
        draws_c[p] = draw_latent(models.col, matrix_col(matrix, cells[p].col), rngs[p]);
        evals[p] = joint_eval(models.joint, cells[p], draws_r[p].z, draws_c[p].z, 1, rngs[p]);
      });
      JointGrads jg = JointGrads::zeros_like(models.joint);
      for (int p = 0; p < B; ++p) {
        jg.d_z_r.setZero();
        jg.d_z_c.setZero();
        joint_backward(models.joint, evals[p], EstimatorMode::elbo_mean, 1.0 / B, jg);
        loss_sum += evals[p].negative_elbo();
      }
      adam_step(models.joint.encoder, jg.enc, enc_state, cfg.adam);
      adam_step(models.joint.decoder, jg.dec, dec_state, cfg.adam);
      loss_items += B;
    }
    losses.push_back(loss_sum / static_cast<double>(loss_items));
  }
}

}  // namespace

PretrainInfo pretrain(Models& models, const DataMatrix& matrix, const TrainConfig& cfg,
                      Rng& rng) {
  PretrainInfo info;
  const bool rows_on = cfg.mode != TrainMode::feature_only;
  if (rows_on) {
    pretrain_side(models.row, matrix, true, cfg, rng.split(11), info.row_losses,
                  &info.row_reseeds);
  }
  pretrain_side(models.col, matrix, false, cfg, rng.split(12), info.col_losses,
                &info.col_reseeds);

  // Bring the scale vectors to their main-loop values before seeding the joint
  // mixture: the joint encoder consumes scaled side latents, so seeding it at
  // warmup scale would leave its components pointing at stale geometry.
  if (rows_on) {
    const Vec prev = models.row.scale;
    update_scale(models.row, side_inputs(matrix, true), cfg.tau, cfg.f_max);
    absorb_scale_change(models.row, prev);
  }
  const Vec prev_col = models.col.scale;
  update_scale(models.col, side_inputs(matrix, false), cfg.tau, cfg.f_max);
  absorb_scale_change(models.col, prev_col);

  if (rows_on && cfg.mode == TrainMode::two_stage) {
    pretrain_joint(models, matrix, cfg, rng.split(14), info.joint_losses);
  }

  if (rows_on) {
    // Seed the joint mixture from joint-encoder outputs on a cell sample.
    Rng jrng = rng.split(13);
    const std::int64_t total = static_cast<std::int64_t>(matrix.rows()) * matrix.cols();
    const std::int64_t want = std::min<std::int64_t>(total, 2048);
    std::vector<std::int64_t> order = shuffled_cells(total, jrng);
    order.resize(want);
    const int L = models.joint.latent_dim();
    Mat points(want, L);
    Mat sig_sq(want, L);
    parallel_for(static_cast<int>(want), cfg.threads, [&](int t) {
      const int i = static_cast<int>(order[t] / matrix.cols());
      const int j = static_cast<int>(order[t] % matrix.cols());
      const Vec z_r = encode(models.row, matrix_row(matrix, i)).mean;
      const Vec z_c = encode(models.col, matrix_col(matrix, j)).mean;
      Vec mu, sigma;
      joint_encode(models.joint, z_r, z_c, mu, sigma);
      points.row(t) = mu.transpose();
      sig_sq.row(t) = sigma.array().square().matrix().transpose();
    });
    GaussianMixture em = fit_em(points, models.joint.components(), jrng, 200, 1e-8, 1e-4,
                                nullptr, &info.joint_reseeds);
    const Vec noise_var = kSeedWidening * sig_sq.colwise().mean().transpose();
    for (int k = 0; k < em.components(); ++k) {
      for (int t = 0; t < L; ++t) {
        em.stds(k, t) = std::sqrt(em.stds(k, t) * em.stds(k, t) + noise_var[t]);
      }
    }
    models.joint.prior = GmmParams::from_mixture(em);
  }
  return info;
}

LossBreakdown total_loss(const Models& models, const DataMatrix& matrix,
                         const BatchSelection& batches, const TrainConfig& cfg, Rng& rng) {
  LossBreakdown lb;
  lb.row_reg = network_sq_norm(models.row);
  lb.col_reg = network_sq_norm(models.col);

  auto side_part = [&](const SideVae& vae, const InfoNceCritic& critic, bool rows_side,
                       const std::vector<int>& items, double& loss, double& contrast) {
    if (items.empty()) return;
    Mat xs(items.size(), vae.input_dim()), zs(items.size(), vae.latent_dim());
    for (std::size_t p = 0; p < items.size(); ++p) {
      const Vec x = side_item(matrix, rows_side, items[p]);
      const SideEval eval = side_eval(vae, x, side_item_mask(matrix, rows_side, items[p]),
                                      cfg.K, rng);
      loss += eval.iw_loss();
      xs.row(p) = x.transpose();
      zs.row(p) = eval.samples[0].z.transpose();
    }
    if (items.size() >= 2) contrast = -info_nce(critic, xs, zs);
  };
  side_part(models.row, models.row_critic, true, batches.rows, lb.row_loss, lb.row_contrast);
  side_part(models.col, models.col_critic, false, batches.cols, lb.col_loss, lb.col_contrast);

  if (!batches.cells.empty()) {
    std::vector<double> values;
    std::vector<Vec> z_samples;
    for (const auto& [i, j] : batches.cells) {
      const LatentDraw dr = draw_latent(models.row, matrix_row(matrix, i), rng);
      const LatentDraw dc = draw_latent(models.col, matrix_col(matrix, j), rng);
      Cell cell{i, j, matrix.values(i, j), matrix.mask(i, j) != 0};
      const JointEval eval = joint_eval(models.joint, cell, dr.z, dc.z, cfg.K, rng);
      lb.joint_loss += eval.iw_loss();
      if (cell.present) {
        values.push_back(cell.value);
        z_samples.push_back(eval.samples[0].z);
      }
    }
    if (values.size() >= 2) {
      Mat xs(values.size(), 1), zs(values.size(), models.joint.latent_dim());
      for (std::size_t p = 0; p < values.size(); ++p) {
        xs(p, 0) = values[p];
        zs.row(p) = z_samples[p].transpose();
      }
      lb.joint_contrast = -info_nce(models.joint_critic, xs, zs);
    }
  }

  if (cfg.lambda9 != 0.0) {
    try {
      const Mat base = cfg.mi_base == MiBase::data ? matrix_to_pmf(matrix.values, &matrix.mask)
                                                   : uniform_pmf(matrix.mask);
      Mat mu_r(matrix.rows(), models.row.latent_dim());
      Mat mu_c(matrix.cols(), models.col.latent_dim());
      for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
        mu_r.row(i) = encode(models.row, matrix_row(matrix, i)).mean_raw.transpose();
      }
      for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
        mu_c.row(j) = encode(models.col, matrix_col(matrix, j)).mean_raw.transpose();
      }
      const GaussianMixture prior_r = models.row.prior.mixture();
      const GaussianMixture prior_c = models.col.prior.mixture();
      Mat gamma_r(mu_r.rows(), prior_r.components()), gamma_c(mu_c.rows(), prior_c.components());
      for (Eigen::Index i = 0; i < mu_r.rows(); ++i) {
        gamma_r.row(i) = gmm_responsibilities(prior_r, mu_r.row(i).transpose()).transpose();
      }
      for (Eigen::Index j = 0; j < mu_c.rows(); ++j) {
        gamma_c.row(j) = gmm_responsibilities(prior_c, mu_c.row(j).transpose()).transpose();
      }
      const double i_orig = pmf_mutual_information(base);
      const double i_hat = coclustered_mutual_information(gamma_r, gamma_c, base);
      lb.mi_loss = cross_loss(i_hat, i_orig);
    } catch (const DataError&) {
      lb.mi_loss = 0.0;  // no co-structure signal in the base table
    }
  }

  lb.total = lb.recombine(cfg);
  return lb;
}

LossBreakdown train_epoch(Models& models, TrainerState& state, const DataMatrix& matrix,
                          const TrainConfig& cfg) {
  const int n = static_cast<int>(matrix.rows());
  const int d = static_cast<int>(matrix.cols());
  cfg.validate(n, d);
  const bool rows_on = cfg.mode != TrainMode::feature_only;
  const bool cells_on = cfg.mode == TrainMode::two_stage;
  const EstimatorMode mode = cfg.dreg ? EstimatorMode::iw_dreg : EstimatorMode::iw_naive;
  Rng epoch_rng = state.rng.split(static_cast<std::uint64_t>(state.epoch) + 1);
  LossBreakdown lb;

  if (rows_on) update_scale(models.row, side_inputs(matrix, true), cfg.tau, cfg.f_max);
  update_scale(models.col, side_inputs(matrix, false), cfg.tau, cfg.f_max);

  if (rows_on) {
    const PhaseTotals t = side_phase(models.row, models.row_critic, matrix, true, cfg.lambda1,
                                     cfg.lambda2, cfg.lambda3, cfg, state.row_enc, state.row_dec,
                                     state.row_prior, state.row_critic_state, epoch_rng,
                                     std::uint64_t{1} << 40);
    lb.row_loss = t.loss_mean();
    lb.row_contrast = t.contrast_mean();
  }
  {
    const PhaseTotals t = side_phase(models.col, models.col_critic, matrix, false, cfg.lambda4,
                                     cfg.lambda5, cfg.lambda6, cfg, state.col_enc, state.col_dec,
                                     state.col_prior, state.col_critic_state, epoch_rng,
                                     std::uint64_t{2} << 40);
    lb.col_loss = t.loss_mean();
    lb.col_contrast = t.contrast_mean();
  }

  if (cells_on) {
    PhaseTotals totals;
    const std::int64_t total_cells = static_cast<std::int64_t>(n) * d;
    std::vector<std::int64_t> order = shuffled_cells(total_cells, epoch_rng);
    const std::int64_t limit =
        cfg.cell_batches_per_epoch > 0
            ? std::min<std::int64_t>(total_cells, static_cast<std::int64_t>(
                                                      cfg.cell_batches_per_epoch) * cfg.cell_batch)
            : total_cells;

    for (std::int64_t start = 0; start < limit; start += cfg.cell_batch) {
      const int B = static_cast<int>(std::min<std::int64_t>(cfg.cell_batch, limit - start));
      std::vector<Rng> rngs(B, Rng(0));
      std::vector<LatentDraw> draws_r(B), draws_c(B);
      std::vector<JointEval> evals(B);
      std::vector<Cell> cells(B);
      for (int p = 0; p < B; ++p) {
        const std::int64_t lin = order[start + p];
        rngs[p] = epoch_rng.split((std::uint64_t{3} << 40) + static_cast<std::uint64_t>(lin));
        cells[p] = Cell{static_cast<int>(lin / d), static_cast<int>(lin % d),
                        matrix.values(lin / d, lin % d), matrix.mask(lin / d, lin % d) != 0};
      }
      parallel_for(B, cfg.threads, [&](int p) {
        draws_r[p] = draw_latent(models.row, matrix_row(matrix, cells[p].row), rngs[p]);
        draws_c[p] = draw_latent(models.col, matrix_col(matrix, cells[p].col), rngs[p]);
        evals[p] = joint_eval(models.joint, cells[p], draws_r[p].z, draws_c[p].z, cfg.K, rngs[p]);
      });

      // contrastive pairs only exist for observed cells
      std::vector<int> nce_pos(B, -1);
      CriticGrads critic_grads;
      Mat d_zs;
      bool contrastive = false;
      if (cfg.lambda8 != 0.0) {
        std::vector<int> present;
        for (int p = 0; p < B; ++p) {
          if (cells[p].present) present.push_back(p);
        }
        if (present.size() >= 2) {
          Mat xs(present.size(), 1), zs(present.size(), models.joint.latent_dim());
          for (std::size_t q = 0; q < present.size(); ++q) {
            xs(q, 0) = cells[present[q]].value;
            zs.row(q) = evals[present[q]].samples[0].z.transpose();
            nce_pos[present[q]] = static_cast<int>(q);
          }
          critic_grads = CriticGrads::zeros_like(models.joint_critic);
          const double c = info_nce_backward(models.joint_critic, xs, zs,
                                             -cfg.lambda8 / static_cast<double>(present.size()),
                                             &critic_grads, &d_zs);
          totals.contrast_sum += -c;
          totals.contrast_items += static_cast<long>(present.size());
          contrastive = true;
        }
      }

      JointGrads jg = JointGrads::zeros_like(models.joint);
      MlpGrads row_enc_g = MlpGrads::zeros_like(models.row.encoder);
      MlpGrads col_enc_g = MlpGrads::zeros_like(models.col.encoder);
      for (int p = 0; p < B; ++p) {
        jg.d_z_r.setZero();
        jg.d_z_c.setZero();
        joint_backward(models.joint, evals[p], mode, cfg.lambda7 / B, jg,
                       cfg.gdreg_sampled_component, &rngs[p]);
        if (nce_pos[p] >= 0) {
          joint_sample_backward(models.joint, evals[p], 0, d_zs.row(nce_pos[p]).transpose(), 1.0,
                                jg);
        }
        latent_backward(models.row, draws_r[p], jg.d_z_r, row_enc_g);
        latent_backward(models.col, draws_c[p], jg.d_z_c, col_enc_g);
        totals.loss_sum += evals[p].iw_loss();
      }
      totals.loss_items += B;

      adam_step(models.joint.encoder, jg.enc, state.joint_enc, cfg.adam);
      adam_step(models.joint.decoder, jg.dec, state.joint_dec, cfg.adam);
      adam_step_gmm(models.joint.prior, jg.prior, state.joint_prior, prior_adam(cfg));
      adam_step(models.row.encoder, row_enc_g, state.row_enc, cfg.adam);
      adam_step(models.col.encoder, col_enc_g, state.col_enc, cfg.adam);
      if (contrastive) {
        adam_step_critic(models.joint_critic, critic_grads, state.joint_critic_state, cfg.adam);
      }
    }
    lb.joint_loss = totals.loss_mean();
    lb.joint_contrast = totals.contrast_mean();
  }

  if (cells_on && cfg.lambda9 != 0.0 && state.mi_enabled) {
    const std::vector<int> sub_rows = subsample_indices(n, std::min(cfg.mi_rows, n), epoch_rng);
    const std::vector<int> sub_cols = subsample_indices(d, std::min(cfg.mi_cols, d), epoch_rng);
    try {
      const int nr = static_cast<int>(sub_rows.size());
      const int nc = static_cast<int>(sub_cols.size());
      Mat values(nr, nc);
      MaskMat mask(nr, nc);
      for (int a = 0; a < nr; ++a) {
        for (int b = 0; b < nc; ++b) {
          values(a, b) = matrix.values(sub_rows[a], sub_cols[b]);
          mask(a, b) = matrix.mask(sub_rows[a], sub_cols[b]);
        }
      }
      const Mat base =
          cfg.mi_base == MiBase::data ? matrix_to_pmf(values, &mask) : uniform_pmf(mask);

      std::vector<PosteriorParams> posts_r(nr), posts_c(nc);
      parallel_for(nr, cfg.threads, [&](int a) {
        posts_r[a] = encode(models.row, matrix_row(matrix, sub_rows[a]));
      });
      parallel_for(nc, cfg.threads, [&](int b) {
        posts_c[b] = encode(models.col, matrix_col(matrix, sub_cols[b]));
      });
      Mat mu_r(nr, models.row.latent_dim()), mu_c(nc, models.col.latent_dim());
      for (int a = 0; a < nr; ++a) mu_r.row(a) = posts_r[a].mean_raw.transpose();
      for (int b = 0; b < nc; ++b) mu_c.row(b) = posts_c[b].mean_raw.transpose();

      const CrossLossGrads cg =
          cross_loss_gradients(base, models.row.prior.mixture(), models.col.prior.mixture(),
                               mu_r, mu_c, cfg.lambda9);

      MlpGrads row_enc_g = MlpGrads::zeros_like(models.row.encoder);
      MlpGrads col_enc_g = MlpGrads::zeros_like(models.col.encoder);
      const int lr = models.row.latent_dim(), lc = models.col.latent_dim();
      for (int a = 0; a < nr; ++a) {
        Vec out_grad = Vec::Zero(2 * lr);
        out_grad.head(lr) = cg.d_mu_r.row(a).transpose();
        mlp_backward(models.row.encoder, posts_r[a].enc_trace, out_grad, &row_enc_g);
      }
      for (int b = 0; b < nc; ++b) {
        Vec out_grad = Vec::Zero(2 * lc);
        out_grad.head(lc) = cg.d_mu_c.row(b).transpose();
        mlp_backward(models.col.encoder, posts_c[b].enc_trace, out_grad, &col_enc_g);
      }
      adam_step(models.row.encoder, row_enc_g, state.row_enc, cfg.adam);
      adam_step(models.col.encoder, col_enc_g, state.col_enc, cfg.adam);
      adam_step_gmm(models.row.prior, cg.prior_r, state.row_prior, prior_adam(cfg));
      adam_step_gmm(models.col.prior, cg.prior_c, state.col_prior, prior_adam(cfg));
      lb.mi_loss = cg.value;
    } catch (const DataError&) {
      lb.mi_loss = 0.0;  // degenerate subsample; skip the step, keep training
    }
  }

  lb.row_reg = network_sq_norm(models.row);
  lb.col_reg = network_sq_norm(models.col);
  lb.total = lb.recombine(cfg);
  check_finite(lb.total, "epoch objective");
  state.epoch += 1;
  state.total_history.push_back(lb.total);
  return lb;
}

namespace {

double holdout_rmse_value(const Models& models, const TrainConfig& cfg, const DataMatrix& working,
                          const std::vector<std::tuple<int, int, double>>& held) {
  const bool by_col = cfg.mode == TrainMode::feature_only;
  std::unordered_map<int, Vec> cache;
  double se = 0.0;
  for (const auto& [i, j, v] : held) {
    const int key = by_col ? j : i;
    auto it = cache.find(key);
    if (it == cache.end()) {
      Vec pred = by_col ? side_predict(models.col, matrix_col(working, j))
                        : side_predict(models.row, matrix_row(working, i));
      it = cache.emplace(key, std::move(pred)).first;
    }
    const double x_hat = by_col ? it->second[i] : it->second[j];
    se += (x_hat - v) * (x_hat - v);
  }
  return std::sqrt(se / static_cast<double>(held.size()));
}

}  // namespace

CoClusterResult fit(const DataMatrix& matrix, const TrainConfig& cfg_in) {
  matrix.validate();
  TrainConfig cfg = cfg_in;
  Checkpoint resume_ck;
  bool resumed = false;
  if (!cfg_in.resume_path.empty()) {
    resume_ck = checkpoint_load(cfg_in.resume_path);
    resumed = true;
    cfg = resume_ck.config;
    // run-control knobs follow the caller; everything model-relevant follows
    // the checkpoint so the continuation is exact
    cfg.max_epochs = cfg_in.max_epochs;
    cfg.checkpoint_path = cfg_in.checkpoint_path;
    cfg.resume_path = cfg_in.resume_path;
    cfg.threads = cfg_in.threads;
    cfg.result_cells = cfg_in.result_cells;
  }
  const int n = static_cast<int>(matrix.rows());
  const int d = static_cast<int>(matrix.cols());
  cfg.validate(n, d);

  const Rng base(cfg.seed);
  Rng init_rng = base.split(1);
  Rng pretrain_rng = base.split(2);
  Rng holdout_rng = base.split(3);
  Rng master = base.split(4);
  Rng result_rng = base.split(5);

  DataMatrix working = matrix;
  std::vector<std::tuple<int, int, double>> held;
  if (cfg.holdout > 0.0) {
    std::vector<std::pair<int, int>> observed;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) {
        if (working.mask(i, j) != 0) observed.emplace_back(i, j);
      }
    }
    holdout_rng.shuffle(observed);
    const std::size_t take = static_cast<std::size_t>(cfg.holdout * observed.size());
    if (take >= observed.size()) throw DataError("holdout fraction leaves no training cells");
    for (std::size_t t = 0; t < take; ++t) {
      const auto [i, j] = observed[t];
      held.emplace_back(i, j, working.values(i, j));
      working.values(i, j) = 0.0;
      working.mask(i, j) = 0;
    }
  }

  CoClusterResult res;
  Models models;
  TrainerState state;
  if (resumed) {
    models = resume_ck.models;
    state = resume_ck.state;
  } else {
    models = init_models(n, d, cfg, init_rng);
    res.pretrain_info = pretrain(models, working, cfg, pretrain_rng);
    state = init_trainer_state(models, cfg);
    state.rng = master;
    if (cfg.mode == TrainMode::two_stage && cfg.lambda9 != 0.0) {
      if (cfg.mi_base == MiBase::uniform) {
        state.mi_enabled = false;
        std::cerr << "warning: uniform base table carries no co-structure signal; "
                     "cross-information term disabled\n";
      } else {
        try {
          if (empirical_mutual_information(working.values, &working.mask) <= kMiEpsilon) {
            state.mi_enabled = false;
            std::cerr << "warning: data mutual information is numerically zero; "
                         "cross-information term disabled\n";
          }
        } catch (const DataError& e) {
          state.mi_enabled = false;
          std::cerr << "warning: cross-information term disabled: " << e.what() << "\n";
        }
      }
    }
  }

  std::string last_good = checkpoint_serialize(Checkpoint{cfg, models, state});
  auto write_ck = [&](const std::string& text) {
    if (cfg.checkpoint_path.empty()) return;
    write_text_file(cfg.checkpoint_path, text);
    res.checkpoint = cfg.checkpoint_path;
  };

  // The loss trace is not monotone: the interacting objectives go through
  // occasional multi-epoch excursions that resolve on their own.  Memberships
  // are read from the best epoch so a run that happens to end inside one still
  // reports the settled geometry; checkpoints keep following the live state so
  // a resumed run continues where training actually stopped.
  Models best_models = models;
  double best_total = std::numeric_limits<double>::infinity();
  res.best_epoch = state.epoch;

  try {
    while (state.epoch < cfg.max_epochs) {
      const LossBreakdown lb = train_epoch(models, state, working, cfg);
      res.trace.push_back(lb);
      if (lb.total < best_total) {
        best_total = lb.total;
        best_models = models;
        res.best_epoch = state.epoch;
      }
      if (!held.empty()) {
        res.holdout_rmse.push_back(holdout_rmse_value(models, cfg, working, held));
      }
      last_good = checkpoint_serialize(Checkpoint{cfg, models, state});
      write_ck(last_good);

      const auto& h = state.total_history;
      if (cfg.early_stop && h.size() >= 20) {
        const double prev = h[h.size() - 11];
        const double rel = (prev - h.back()) / std::max(std::abs(prev), 1e-12);
        if (rel < 1e-4) break;
      }
    }
  } catch (const NumericError&) {
    write_ck(last_good);  // preserve the last finite state for inspection
    throw;
  }
  write_ck(last_good);
  models = best_models;

  res.gamma_c = Mat(d, cfg.m);
  parallel_for(d, cfg.threads, [&](int j) {
    res.gamma_c.row(j) = cluster_assign(models.col, matrix_col(working, j)).transpose();
  });
  res.col_labels.resize(d);
  for (int j = 0; j < d; ++j) {
    Eigen::Index arg = 0;
    res.gamma_c.row(j).maxCoeff(&arg);
    res.col_labels[j] = static_cast<int>(arg);
  }

  res.gamma_r = Mat(n, cfg.g);
  res.row_labels.resize(n);
  if (cfg.mode == TrainMode::feature_only) {
    // rows never see an encoder in this arrangement: cluster them by the
    // profile the column decoders reconstruct for them
    Mat xhat(n, d);
    parallel_for(d, cfg.threads, [&](int j) {
      xhat.col(j) = side_predict(models.col, matrix_col(working, j));
    });
    const GaussianMixture em =
        fit_em(xhat, cfg.g, result_rng, 200, 1e-8, 1e-4, nullptr, nullptr);
    for (int i = 0; i < n; ++i) {
      res.gamma_r.row(i) = gmm_responsibilities(em, xhat.row(i).transpose()).transpose();
    }
  } else {
    parallel_for(n, cfg.threads, [&](int i) {
      res.gamma_r.row(i) = cluster_assign(models.row, matrix_row(working, i)).transpose();
    });
  }
  for (int i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    res.gamma_r.row(i).maxCoeff(&arg);
    res.row_labels[i] = static_cast<int>(arg);
  }

  if (cfg.mode != TrainMode::feature_only && cfg.result_cells > 0) {
    const std::int64_t total = static_cast<std::int64_t>(n) * d;
    std::vector<std::int64_t> order = shuffled_cells(total, result_rng);
    order.resize(std::min<std::int64_t>(cfg.result_cells, total));
    std::sort(order.begin(), order.end());
    res.gamma_rc.resize(order.size());
    parallel_for(static_cast<int>(order.size()), cfg.threads, [&](int t) {
      const int i = static_cast<int>(order[t] / d);
      const int j = static_cast<int>(order[t] % d);
      const Vec z_r = encode(models.row, matrix_row(working, i)).mean;
      const Vec z_c = encode(models.col, matrix_col(working, j)).mean;
      Vec mu, sigma;
      joint_encode(models.joint, z_r, z_c, mu, sigma);
      res.gamma_rc[t] = CellMembership{i, j, joint_responsibilities(models.joint, mu)};
    });
  }
  return res;
}

void export_embeddings(const SideVae& row_model, const SideVae& col_model, const DataMatrix& m,
                       const std::string& out_path) {
  m.validate();
  std::string out;
  auto emit = [&out](const char* kind, int index, const SideVae& vae, const Vec& x) {
    const PosteriorParams post = encode(vae, x);
    const Vec gamma = gmm_responsibilities(vae.prior.mixture(), post.mean_raw);
    Eigen::Index arg = 0;
    gamma.maxCoeff(&arg);
    out += kind;
    out += ',' + std::to_string(index) + ',' + std::to_string(arg);
    for (Eigen::Index t = 0; t < post.mean_raw.size(); ++t) {
      out += ',' + fmt17(post.mean_raw[t]);
    }
    for (Eigen::Index k = 0; k < gamma.size(); ++k) out += ',' + fmt17(gamma[k]);
    out += '\n';
  };
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    emit("row", static_cast<int>(i), row_model, matrix_row(m, i));
  }
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    emit("col", static_cast<int>(j), col_model, matrix_col(m, j));
  }
  write_text_file(out_path, out);
}

}  // namespace srvcc
