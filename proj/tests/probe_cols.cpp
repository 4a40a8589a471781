#include <cstdio>
#include <cstdlib>
#include <algorithm>

#include "srvcc/data.hpp"
#include "srvcc/metrics.hpp"
#include "srvcc/trainer.hpp"

using namespace srvcc;

int main(int argc, char** argv) {
  const int pretrain_epochs = argc > 1 ? std::atoi(argv[1]) : 15;
  const int main_epochs = argc > 2 ? std::atoi(argv[2]) : 10;
  const double tau = argc > 3 ? std::atof(argv[3]) : 1.0;
  const double f_max = argc > 4 ? std::atof(argv[4]) : 10.0;
  const char preset = argc > 5 ? argv[5][0] : 'f';
  SyntheticSpec spec;
  spec.n = 40;
  spec.d = 30;
  spec.g = 4;
  spec.m = 3;
  spec.noise_level = 0.05;
  spec.seed = 4;
  SyntheticData synth = synth_checkerboard(spec);
  synth.matrix = preprocess(synth.matrix, PreprocessMode::minmax01);

  TrainConfig cfg;
  cfg.g = 4;
  cfg.m = 3;
  cfg.row_latent = 4;
  cfg.col_latent = 4;
  cfg.joint_latent = 4;
  cfg.hidden = 32;
  cfg.K = 4;
  cfg.row_batch = 16;
  cfg.col_batch = 16;
  cfg.cell_batch = 256;
  cfg.pretrain_epochs = pretrain_epochs;
  cfg.max_epochs = main_epochs;
  cfg.tau = tau;
  cfg.f_max = f_max;
  cfg.early_stop = false;
  cfg.result_cells = 200;
  cfg.seed = 3;
  if (argc > 6 && argv[6][0] != 'g') {
    cfg.row_likelihood = Likelihood::bernoulli;
    cfg.col_likelihood = Likelihood::bernoulli;
    if (argv[6][0] == 'b') cfg.joint_likelihood = Likelihood::bernoulli;
  }
  // Term presets: s = side ELBOs only, j = +joint, m = +MI, c = +contrastive,
  // f = everything (defaults).  Uppercase = same but without weight decay.
  const char kind = preset >= 'A' && preset <= 'Z' ? preset - 'A' + 'a' : preset;
  if (kind != preset) cfg.lambda1 = cfg.lambda4 = 0.0;
  if (kind != 'f') {
    cfg.lambda3 = cfg.lambda6 = 0.0;
    cfg.lambda7 = cfg.lambda8 = cfg.lambda9 = 0.0;
    if (kind == 'j') cfg.lambda7 = 1.0;
    if (kind == 'm') cfg.lambda9 = 1.0;
    if (kind == 'c') cfg.lambda3 = cfg.lambda6 = 0.1;
  }

  Rng base(cfg.seed);
  Rng init_rng = base.split(1);
  Rng pre_rng = base.split(2);
  Models ms = init_models(spec.n, spec.d, cfg, init_rng);
  PretrainInfo info = pretrain(ms, synth.matrix, cfg, pre_rng);
  std::printf("pretrain row loss %.4f -> %.4f | col loss %.4f -> %.4f | reseeds r%d c%d j%d\n",
              info.row_losses.front(), info.row_losses.back(), info.col_losses.front(),
              info.col_losses.back(), info.row_reseeds, info.col_reseeds, info.joint_reseeds);

  auto acc_now = [&](const char* when) {
    std::vector<int> rl(spec.n), cl(spec.d);
    for (int i = 0; i < spec.n; ++i) {
      Eigen::Index a = 0;
      cluster_assign(ms.row, matrix_row(synth.matrix, i)).maxCoeff(&a);
      rl[i] = static_cast<int>(a);
    }
    for (int j = 0; j < spec.d; ++j) {
      Eigen::Index a = 0;
      cluster_assign(ms.col, matrix_col(synth.matrix, j)).maxCoeff(&a);
      cl[j] = static_cast<int>(a);
    }
    std::printf("%s: row acc %.3f col acc %.3f\n", when,
                accuracy_hungarian(rl, synth.row_labels), accuracy_hungarian(cl, synth.col_labels));
  };
  std::printf("matrix range [%.3f, %.3f]\n", synth.matrix.values.minCoeff(),
              synth.matrix.values.maxCoeff());
  {
    Mat cent = Mat::Zero(spec.m, spec.n);
    Vec cnt = Vec::Zero(spec.m);
    for (int j = 0; j < spec.d; ++j) {
      cent.row(synth.col_labels[j]) += matrix_col(synth.matrix, j).transpose();
      cnt[synth.col_labels[j]] += 1.0;
    }
    for (int b = 0; b < spec.m; ++b) cent.row(b) /= cnt[b];
    for (int a = 0; a < spec.m; ++a)
      for (int b = a + 1; b < spec.m; ++b)
        std::printf("col cluster input dist %d-%d: %.3f (per-dim %.3f)\n", a, b,
                    (cent.row(a) - cent.row(b)).norm(),
                    (cent.row(a) - cent.row(b)).cwiseAbs().mean());
  }
  auto side_report = [&](const char* tag, const SideVae& vae, bool rows_side) {
    const Vec x = rows_side ? matrix_row(synth.matrix, 0) : matrix_col(synth.matrix, 0);
    Rng r(777);
    const SideEval ev = side_eval(vae, x, Vec(), 1, r);
    const PosteriorParams post = encode(vae, x);
    const Vec xhat = mlp_forward(vae.decoder, post.mean);
    std::printf(
        "%s: recon %.3f kl %.3f | sigma mean %.3f | f mean %.3f | mean|x-xhat| %.3f\n", tag,
        ev.recon_term, ev.kl_term, ev.post.std.mean(), vae.scale.mean(),
        (x - xhat).cwiseAbs().mean());
  };
  auto struct_report = [&](const char* tag, const SideVae& vae, bool rows_side) {
    const int n_items = rows_side ? spec.n : spec.d;
    const int truth_k = rows_side ? spec.g : spec.m;
    const std::vector<int>& truth = rows_side ? synth.row_labels : synth.col_labels;
    const int L = vae.latent_dim();
    Mat cent = Mat::Zero(truth_k, L);
    Vec cnt = Vec::Zero(truth_k);
    Mat mus(n_items, L);
    double margin = 0.0;
    double sig_bar = 0.0;
    for (int i = 0; i < n_items; ++i) {
      const Vec x = rows_side ? matrix_row(synth.matrix, i) : matrix_col(synth.matrix, i);
      const PosteriorParams post = encode(vae, x);
      const Vec mu = post.mean_raw;
      sig_bar += post.std.mean();
      mus.row(i) = mu.transpose();
      cent.row(truth[i]) += mu.transpose();
      cnt[truth[i]] += 1.0;
      Vec g = cluster_assign(vae, x);
      std::sort(g.data(), g.data() + g.size());
      margin += g[g.size() - 1] - g[g.size() - 2];
    }
    for (int k = 0; k < truth_k; ++k) cent.row(k) /= cnt[k];
    double within = 0.0;
    for (int i = 0; i < n_items; ++i) within += (mus.row(i) - cent.row(truth[i])).norm();
    within /= n_items;
    double min_between = 1e30;
    for (int a = 0; a < truth_k; ++a)
      for (int b = a + 1; b < truth_k; ++b)
        min_between = std::min(min_between, (cent.row(a) - cent.row(b)).norm());
    const GaussianMixture pm = vae.prior.mixture();
    double prior_min = 1e30;
    for (int a = 0; a < pm.components(); ++a)
      for (int b = a + 1; b < pm.components(); ++b)
        prior_min = std::min(prior_min, (pm.means.row(a) - pm.means.row(b)).norm());
    std::printf(
        "  %s latent: between %.3f within %.3f sigma %.3f | prior: comp dist %.3f std %.3f | "
        "margin %.3f | map",
        tag, min_between, within, sig_bar / n_items, prior_min, pm.stds.mean(),
        margin / n_items);
    for (int k = 0; k < truth_k; ++k) {
      std::vector<int> votes(pm.components(), 0);
      for (int i = 0; i < n_items; ++i) {
        if (truth[i] != k) continue;
        const Vec x = rows_side ? matrix_row(synth.matrix, i) : matrix_col(synth.matrix, i);
        Eigen::Index a = 0;
        cluster_assign(vae, x).maxCoeff(&a);
        ++votes[a];
      }
      const int best = static_cast<int>(std::max_element(votes.begin(), votes.end()) -
                                        votes.begin());
      std::printf(" %d->%d", k, best);
    }
    std::printf(" | w");
    for (int k = 0; k < pm.components(); ++k) std::printf(" %.2f", pm.weights[k]);
    std::printf("\n");
  };
  side_report("row0", ms.row, true);
  side_report("col0", ms.col, false);
  struct_report("row", ms.row, true);
  struct_report("col", ms.col, false);

  auto pairwise = [&](const char* tag, const SideVae& vae, bool rows_side) {
    const int n_items = rows_side ? spec.n : spec.d;
    const int truth_k = rows_side ? spec.g : spec.m;
    const std::vector<int>& truth = rows_side ? synth.row_labels : synth.col_labels;
    Mat cent = Mat::Zero(truth_k, vae.latent_dim());
    Mat icent = Mat::Zero(truth_k, vae.input_dim());
    Vec cnt = Vec::Zero(truth_k);
    for (int i = 0; i < n_items; ++i) {
      const Vec x = rows_side ? matrix_row(synth.matrix, i) : matrix_col(synth.matrix, i);
      cent.row(truth[i]) += encode(vae, x).mean_raw.transpose();
      icent.row(truth[i]) += x.transpose();
      cnt[truth[i]] += 1.0;
    }
    for (int k = 0; k < truth_k; ++k) {
      cent.row(k) /= cnt[k];
      icent.row(k) /= cnt[k];
    }
    std::printf("%s pair dists (latent / input):", tag);
    for (int a = 0; a < truth_k; ++a)
      for (int b = a + 1; b < truth_k; ++b)
        std::printf("  %d-%d %.3f/%.2f", a, b, (cent.row(a) - cent.row(b)).norm(),
                    (icent.row(a) - icent.row(b)).norm());
    std::printf("\n");
  };
  pairwise("row", ms.row, true);
  pairwise("col", ms.col, false);
  acc_now("after pretrain");

  // column latents and mixture snapshot
  const GaussianMixture mix = ms.col.prior.mixture();
  std::printf("col prior weights:");
  for (int k = 0; k < mix.components(); ++k) std::printf(" %.3f", mix.weights[k]);
  std::printf("\ncol latent means (first 2 dims) vs truth:\n");
  for (int j = 0; j < spec.d; ++j) {
    const Vec mu = encode(ms.col, matrix_col(synth.matrix, j)).mean_raw;
    std::printf("  j=%2d true=%d mu=[%7.3f %7.3f %7.3f %7.3f]\n", j, synth.col_labels[j], mu[0],
                mu[1], mu[2], mu[3]);
    if (j > 8) break;
  }

  TrainerState st = init_trainer_state(ms, cfg);
  st.rng = base.split(4);
  for (int e = 0; e < cfg.max_epochs; ++e) {
    LossBreakdown lb = train_epoch(ms, st, synth.matrix, cfg);
    std::printf("epoch %2d total %.4f row %.4f col %.4f joint %.4f mi %.4f | ", e + 1, lb.total,
                lb.row_loss, lb.col_loss, lb.joint_loss, lb.mi_loss);
    acc_now("");
    struct_report("row", ms.row, true);
    struct_report("col", ms.col, false);
  }
  return 0;
}
