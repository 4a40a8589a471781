#include "srvcc/trainer.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace srvcc {
namespace {

// Whitespace-delimited token stream.  Every floating-point value is written
// with 17 significant digits, so a save/load round trip is bit-exact.
struct TokenWriter {
  std::string out;

  void word(const std::string& w) {
    out += w;
    out += ' ';
  }
  void num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    word(buf);
  }
  void integer(std::int64_t v) { word(std::to_string(v)); }
  void unsigned_int(std::uint64_t v) { word(std::to_string(v)); }
  void vec(const Vec& v) {
    integer(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) num(v[i]);
  }
  void mat(const Mat& m) {
    integer(m.rows());
    integer(m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) num(m(i, j));
    }
  }
};

struct TokenReader {
  std::vector<std::string> tokens;
  std::size_t pos = 0;

  explicit TokenReader(const std::string& text) {
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
  }

  const std::string& next() {
    if (pos >= tokens.size()) throw DataError("checkpoint: unexpected end of stream");
    return tokens[pos++];
  }
  void expect(const char* w) {
    const std::string& t = next();
    if (t != w) throw DataError(std::string("checkpoint: expected '") + w + "', found '" + t + "'");
  }
  double num() {
    const std::string& t = next();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0') throw DataError("checkpoint: bad number '" + t + "'");
    return v;
  }
  std::int64_t integer() {
    const std::string& t = next();
    char* end = nullptr;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0') throw DataError("checkpoint: bad integer '" + t + "'");
    return v;
  }
  std::uint64_t unsigned_int() {
    const std::string& t = next();
    char* end = nullptr;
    const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    if (end == t.c_str() || *end != '\0') throw DataError("checkpoint: bad integer '" + t + "'");
    return v;
  }
  Vec vec() {
    const std::int64_t n = integer();
    if (n < 0) throw DataError("checkpoint: negative vector length");
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = num();
    return v;
  }
  Mat mat() {
    const std::int64_t r = integer(), c = integer();
    if (r < 0 || c < 0) throw DataError("checkpoint: negative matrix shape");
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = num();
    }
    return m;
  }
};

void write_mlp(TokenWriter& w, const MlpParams& mlp) {
  w.word("mlp");
  w.integer(static_cast<std::int64_t>(mlp.layers.size()));
  for (const MlpLayer& layer : mlp.layers) {
    w.integer(layer.weight.rows());
    w.integer(layer.weight.cols());
    w.integer(static_cast<int>(layer.act));
  }
  w.vec(mlp.pack());
}

MlpParams read_mlp(TokenReader& r) {
  r.expect("mlp");
  const std::int64_t n_layers = r.integer();
  if (n_layers < 1) throw DataError("checkpoint: network needs at least one layer");
  MlpParams mlp;
  mlp.layers.resize(n_layers);
  for (auto& layer : mlp.layers) {
    const std::int64_t out = r.integer(), in = r.integer();
    const std::int64_t act = r.integer();
    if (out < 1 || in < 1) throw DataError("checkpoint: bad layer shape");
    if (act < 0 || act > 3) throw DataError("checkpoint: bad activation code");
    layer.weight = Mat::Zero(out, in);
    layer.bias = Vec::Zero(out);
    layer.act = static_cast<Activation>(act);
  }
  mlp.unpack(r.vec());
  return mlp;
}

void write_gmm(TokenWriter& w, const GmmParams& prior) {
  w.word("gmm");
  w.num(prior.std_floor);
  w.vec(prior.logits);
  w.mat(prior.means);
  w.mat(prior.std_raw);
}

GmmParams read_gmm(TokenReader& r) {
  r.expect("gmm");
  GmmParams prior;
  prior.std_floor = r.num();
  prior.logits = r.vec();
  prior.means = r.mat();
  prior.std_raw = r.mat();
  if (prior.means.rows() != prior.logits.size() || prior.means.rows() != prior.std_raw.rows() ||
      prior.means.cols() != prior.std_raw.cols()) {
    throw DataError("checkpoint: inconsistent mixture shapes");
  }
  return prior;
}

void write_side(TokenWriter& w, const SideVae& vae) {
  w.word("side");
  write_mlp(w, vae.encoder);
  write_mlp(w, vae.decoder);
  write_gmm(w, vae.prior);
  w.vec(vae.scale);
  w.integer(static_cast<int>(vae.likelihood));
}

SideVae read_side(TokenReader& r) {
  r.expect("side");
  SideVae vae;
  vae.encoder = read_mlp(r);
  vae.decoder = read_mlp(r);
  vae.prior = read_gmm(r);
  vae.scale = r.vec();
  vae.likelihood = static_cast<Likelihood>(r.integer());
  vae.validate();
  return vae;
}

void write_joint(TokenWriter& w, const JointVae& jv) {
  w.word("joint");
  write_mlp(w, jv.encoder);
  write_mlp(w, jv.decoder);
  write_gmm(w, jv.prior);
  w.integer(jv.row_latent);
  w.integer(jv.col_latent);
  w.integer(static_cast<int>(jv.likelihood));
}

JointVae read_joint(TokenReader& r) {
  r.expect("joint");
  JointVae jv;
  jv.encoder = read_mlp(r);
  jv.decoder = read_mlp(r);
  jv.prior = read_gmm(r);
  jv.row_latent = static_cast<int>(r.integer());
  jv.col_latent = static_cast<int>(r.integer());
  jv.likelihood = static_cast<Likelihood>(r.integer());
  jv.validate();
  return jv;
}

void write_critic(TokenWriter& w, const InfoNceCritic& critic) {
  w.word("critic");
  w.integer(static_cast<int>(critic.kind));
  w.num(critic.temperature);
  if (critic.kind == CriticKind::bilinear) {
    w.mat(critic.projection);
  } else {
    write_mlp(w, critic.net);
  }
}

InfoNceCritic read_critic(TokenReader& r) {
  r.expect("critic");
  InfoNceCritic critic;
  critic.kind = static_cast<CriticKind>(r.integer());
  critic.temperature = r.num();
  if (critic.kind == CriticKind::bilinear) {
    critic.projection = r.mat();
  } else {
    critic.net = read_mlp(r);
  }
  critic.validate();
  return critic;
}

void write_adam(TokenWriter& w, const AdamState& st) {
  w.word("adam");
  w.integer(st.step);
  w.vec(st.m);
  w.vec(st.v);
}

AdamState read_adam(TokenReader& r) {
  r.expect("adam");
  AdamState st;
  st.step = r.integer();
  st.m = r.vec();
  st.v = r.vec();
  if (st.m.size() != st.v.size()) throw DataError("checkpoint: inconsistent optimizer moments");
  return st;
}

void write_rng(TokenWriter& w, const Rng& rng) {
  const std::string blob = rng.serialize();
  std::istringstream is(blob);
  std::vector<std::string> toks;
  std::string tok;
  while (is >> tok) toks.push_back(tok);
  w.word("rng");
  w.integer(static_cast<std::int64_t>(toks.size()));
  for (const auto& t : toks) w.word(t);
}

Rng read_rng(TokenReader& r) {
  r.expect("rng");
  const std::int64_t count = r.integer();
  if (count < 1) throw DataError("checkpoint: empty random-stream state");
  std::string blob;
  for (std::int64_t i = 0; i < count; ++i) {
    if (i > 0) blob += ' ';
    blob += r.next();
  }
  Rng rng(0);
  rng.deserialize(blob);
  return rng;
}

void write_config(TokenWriter& w, const TrainConfig& c) {
  w.word("config");
  w.integer(c.g);
  w.integer(c.m);
  w.integer(c.M);
  w.integer(c.row_latent);
  w.integer(c.col_latent);
  w.integer(c.joint_latent);
  w.integer(c.hidden);
  for (double l : {c.lambda1, c.lambda2, c.lambda3, c.lambda4, c.lambda5, c.lambda6, c.lambda7,
                   c.lambda8, c.lambda9}) {
    w.num(l);
  }
  w.integer(c.K);
  w.integer(c.row_batch);
  w.integer(c.col_batch);
  w.integer(c.cell_batch);
  w.integer(c.cell_batches_per_epoch);
  w.num(c.adam.lr);
  w.num(c.adam.beta1);
  w.num(c.adam.beta2);
  w.num(c.adam.eps);
  w.integer(c.max_epochs);
  w.integer(c.pretrain_epochs);
  w.num(c.tau);
  w.num(c.f_max);
  w.integer(static_cast<int>(c.mode));
  w.integer(c.dreg ? 1 : 0);
  w.integer(c.gdreg_sampled_component ? 1 : 0);
  w.unsigned_int(c.seed);
  w.integer(static_cast<int>(c.row_likelihood));
  w.integer(static_cast<int>(c.col_likelihood));
  w.integer(static_cast<int>(c.joint_likelihood));
  w.integer(static_cast<int>(c.mi_base));
  w.integer(c.mi_rows);
  w.integer(c.mi_cols);
  w.integer(c.early_stop ? 1 : 0);
  w.integer(c.threads);
  w.num(c.holdout);
  w.integer(c.result_cells);
  w.num(c.critic_temperature);
}

TrainConfig read_config(TokenReader& r) {
  r.expect("config");
  TrainConfig c;
  c.g = static_cast<int>(r.integer());
  c.m = static_cast<int>(r.integer());
  c.M = static_cast<int>(r.integer());
  c.row_latent = static_cast<int>(r.integer());
  c.col_latent = static_cast<int>(r.integer());
  c.joint_latent = static_cast<int>(r.integer());
  c.hidden = static_cast<int>(r.integer());
  c.lambda1 = r.num();
  c.lambda2 = r.num();
  c.lambda3 = r.num();
  c.lambda4 = r.num();
  c.lambda5 = r.num();
  c.lambda6 = r.num();
  c.lambda7 = r.num();
  c.lambda8 = r.num();
  c.lambda9 = r.num();
  c.K = static_cast<int>(r.integer());
  c.row_batch = static_cast<int>(r.integer());
  c.col_batch = static_cast<int>(r.integer());
  c.cell_batch = static_cast<int>(r.integer());
  c.cell_batches_per_epoch = static_cast<int>(r.integer());
  c.adam.lr = r.num();
  c.adam.beta1 = r.num();
  c.adam.beta2 = r.num();
  c.adam.eps = r.num();
  c.max_epochs = static_cast<int>(r.integer());
  c.pretrain_epochs = static_cast<int>(r.integer());
  c.tau = r.num();
  c.f_max = r.num();
  c.mode = static_cast<TrainMode>(r.integer());
  c.dreg = r.integer() != 0;
  c.gdreg_sampled_component = r.integer() != 0;
  c.seed = r.unsigned_int();
  c.row_likelihood = static_cast<Likelihood>(r.integer());
  c.col_likelihood = static_cast<Likelihood>(r.integer());
  c.joint_likelihood = static_cast<Likelihood>(r.integer());
  c.mi_base = static_cast<MiBase>(r.integer());
  c.mi_rows = static_cast<int>(r.integer());
  c.mi_cols = static_cast<int>(r.integer());
  c.early_stop = r.integer() != 0;
  c.threads = static_cast<int>(r.integer());
  c.holdout = r.num();
  c.result_cells = static_cast<int>(r.integer());
  c.critic_temperature = r.num();
  return c;
}

}  // namespace

std::string checkpoint_serialize(const Checkpoint& ck) {
  TokenWriter w;
  w.word("srvcc_checkpoint");
  w.word("v1");
  write_config(w, ck.config);
  w.word("models");
  write_side(w, ck.models.row);
  write_side(w, ck.models.col);
  write_joint(w, ck.models.joint);
  write_critic(w, ck.models.row_critic);
  write_critic(w, ck.models.col_critic);
  write_critic(w, ck.models.joint_critic);
  w.word("state");
  write_adam(w, ck.state.row_enc);
  write_adam(w, ck.state.row_dec);
  write_adam(w, ck.state.row_prior);
  write_adam(w, ck.state.row_critic_state);
  write_adam(w, ck.state.col_enc);
  write_adam(w, ck.state.col_dec);
  write_adam(w, ck.state.col_prior);
  write_adam(w, ck.state.col_critic_state);
  write_adam(w, ck.state.joint_enc);
  write_adam(w, ck.state.joint_dec);
  write_adam(w, ck.state.joint_prior);
  write_adam(w, ck.state.joint_critic_state);
  write_rng(w, ck.state.rng);
  w.integer(ck.state.epoch);
  w.integer(ck.state.mi_enabled ? 1 : 0);
  w.integer(static_cast<std::int64_t>(ck.state.total_history.size()));
  for (double h : ck.state.total_history) w.num(h);
  w.word("end");
  return w.out;
}

Checkpoint checkpoint_deserialize(const std::string& text) {
  TokenReader r(text);
  r.expect("srvcc_checkpoint");
  r.expect("v1");
  Checkpoint ck;
  ck.config = read_config(r);
  r.expect("models");
  ck.models.row = read_side(r);
  ck.models.col = read_side(r);
  ck.models.joint = read_joint(r);
  ck.models.row_critic = read_critic(r);
  ck.models.col_critic = read_critic(r);
  ck.models.joint_critic = read_critic(r);
  r.expect("state");
  ck.state.row_enc = read_adam(r);
  ck.state.row_dec = read_adam(r);
  ck.state.row_prior = read_adam(r);
  ck.state.row_critic_state = read_adam(r);
  ck.state.col_enc = read_adam(r);
  ck.state.col_dec = read_adam(r);
  ck.state.col_prior = read_adam(r);
  ck.state.col_critic_state = read_adam(r);
  ck.state.joint_enc = read_adam(r);
  ck.state.joint_dec = read_adam(r);
  ck.state.joint_prior = read_adam(r);
  ck.state.joint_critic_state = read_adam(r);
  ck.state.rng = read_rng(r);
  ck.state.epoch = static_cast<int>(r.integer());
  ck.state.mi_enabled = r.integer() != 0;
  const std::int64_t hist = r.integer();
  if (hist < 0) throw DataError("checkpoint: negative history length");
  ck.state.total_history.resize(hist);
  for (auto& h : ck.state.total_history) h = r.num();
  r.expect("end");
  return ck;
}

void checkpoint_save(const std::string& path, const Checkpoint& ck) {
  write_text_file(path, checkpoint_serialize(ck));
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_deserialize(buf.str());
}

}  // namespace srvcc
