#pragma once

#include <string>
#include <utility>
#include <vector>

#include "srvcc/data.hpp"
#include "srvcc/info.hpp"
#include "srvcc/joint_vae.hpp"
#include "srvcc/optim.hpp"
#include "srvcc/side_vae.hpp"

namespace srvcc {

enum class TrainMode { two_stage, simple_cascade, feature_only };
enum class MiBase { data, uniform };

TrainMode mode_from_string(const std::string& name);
std::string mode_name(TrainMode mode);
MiBase mi_base_from_string(const std::string& name);
std::string mi_base_name(MiBase base);

struct TrainConfig {
  int g = 4;  // row clusters
  int m = 3;  // column clusters
  int M = 0;  // joint components; 0 means g*m
  int row_latent = 8, col_latent = 8, joint_latent = 8;
  int hidden = 64;  // single hidden layer width for every network

  // objective weights: 1/4 side regularizers, 2/5 side bounds, 3/6 side
  // contrastive terms, 7 joint bound, 8 joint contrastive, 9 cross-information
  double lambda1 = 1e-4, lambda2 = 1.0, lambda3 = 0.1;
  double lambda4 = 1e-4, lambda5 = 1.0, lambda6 = 0.1;
  double lambda7 = 1.0, lambda8 = 0.1, lambda9 = 1.0;

  int K = 4;  // importance draws per item
  int row_batch = 64, col_batch = 64, cell_batch = 256;
  int cell_batches_per_epoch = 0;  // 0: one full sweep over all cells

  AdamConfig adam;
  // The mixture priors are seeded from the warmed geometry and act as its
  // anchors; adapting them at the full network rate lets components chase
  // drifting points until two clusters share one basin, so they move slower.
  double prior_lr_scale = 0.05;
  int max_epochs = 60;
  int pretrain_epochs = 20;
  double tau = 1.0, f_max = 100.0;

  TrainMode mode = TrainMode::two_stage;
  bool dreg = true;                     // doubly-reparameterized estimators vs naive
  bool gdreg_sampled_component = false;  // draw the inverted component instead of argmax
  std::uint64_t seed = 0;

  Likelihood row_likelihood = Likelihood::gaussian_unit_variance;
  Likelihood col_likelihood = Likelihood::gaussian_unit_variance;
  Likelihood joint_likelihood = Likelihood::gaussian_unit_variance;

  MiBase mi_base = MiBase::data;
  int mi_rows = 512, mi_cols = 512;  // cross-information subsample

  bool early_stop = true;
  int threads = 1;
  double holdout = 0.0;   // fraction of observed cells hidden for validation
  int result_cells = 2000;  // cell sample size for the joint memberships
  double critic_temperature = 0.1;

  std::string checkpoint_path;  // empty: no checkpoint written
  std::string resume_path;      // empty: fresh start

  int joint_components() const { return M > 0 ? M : g * m; }
  void validate(Eigen::Index n, Eigen::Index d) const;
};

// One evaluation of the combined objective.  Side/joint bound fields and
// contrastive fields hold per-item / per-batch means when logged by the
// trainer and plain sums when produced by total_loss on explicit batches;
// total is always the lambda-weighted combination of the stored parts.
struct LossBreakdown {
  double row_reg = 0.0, row_loss = 0.0, row_contrast = 0.0;
  double col_reg = 0.0, col_loss = 0.0, col_contrast = 0.0;
  double joint_loss = 0.0, joint_contrast = 0.0;
  double mi_loss = 0.0;
  double total = 0.0;

  // recomputes the weighted sum from the parts (the bookkeeping oracle)
  double recombine(const TrainConfig& cfg) const;
};

struct Models {
  SideVae row, col;
  JointVae joint;
  InfoNceCritic row_critic, col_critic, joint_critic;
};

Models init_models(Eigen::Index n, Eigen::Index d, const TrainConfig& cfg, Rng& rng);

struct PretrainInfo {
  // per-epoch mean negative ELBO
  std::vector<double> row_losses, col_losses, joint_losses;
  int row_reseeds = 0, col_reseeds = 0, joint_reseeds = 0;
};

// Warms the side autoencoders and then the joint autoencoder under frozen
// standard-normal priors, then moves the mixture priors onto the learned
// posterior means with EM (the joint mixture from joint-encoder outputs on a
// cell sample).
PretrainInfo pretrain(Models& models, const DataMatrix& matrix, const TrainConfig& cfg, Rng& rng);

struct TrainerState {
  AdamState row_enc, row_dec, row_prior, row_critic_state;
  AdamState col_enc, col_dec, col_prior, col_critic_state;
  AdamState joint_enc, joint_dec, joint_prior, joint_critic_state;
  Rng rng{0};
  int epoch = 0;  // completed main-loop epochs
  bool mi_enabled = true;
  std::vector<double> total_history;  // per-epoch totals, drives early stopping
};

TrainerState init_trainer_state(const Models& models, const TrainConfig& cfg);

struct BatchSelection {
  std::vector<int> rows, cols;
  std::vector<std::pair<int, int>> cells;
};

// Combined objective on explicit batches, summed per the objective's
// definition (no gradient, no parameter updates).
LossBreakdown total_loss(const Models& models, const DataMatrix& matrix,
                         const BatchSelection& batches, const TrainConfig& cfg, Rng& rng);

// One pass: scale updates, row/column/cell mini-batch loops with interleaved
// optimizer steps, then the cross-information step.  Returns per-item means.
LossBreakdown train_epoch(Models& models, TrainerState& state, const DataMatrix& matrix,
                          const TrainConfig& cfg);

struct CellMembership {
  int row = 0, col = 0;
  Vec gamma;
};

struct CoClusterResult {
  Mat gamma_r, gamma_c;
  std::vector<int> row_labels, col_labels;
  std::vector<CellMembership> gamma_rc;
  std::vector<LossBreakdown> trace;
  std::vector<double> holdout_rmse;  // per epoch, only when holdout > 0
  PretrainInfo pretrain_info;
  int best_epoch = 0;      // epoch whose state produced the memberships
  std::string checkpoint;  // path of the final checkpoint, when written
};

CoClusterResult fit(const DataMatrix& matrix, const TrainConfig& cfg);

// One CSV record per row and per column: kind, index, hard label, the
// unscaled posterior mean coordinates, then the soft membership vector.
void export_embeddings(const SideVae& row_model, const SideVae& col_model, const DataMatrix& m,
                       const std::string& out_path);

struct Checkpoint {
  TrainConfig config;
  Models models;
  TrainerState state;
};

std::string checkpoint_serialize(const Checkpoint& ck);
Checkpoint checkpoint_deserialize(const std::string& text);
void checkpoint_save(const std::string& path, const Checkpoint& ck);
Checkpoint checkpoint_load(const std::string& path);

}  // namespace srvcc
