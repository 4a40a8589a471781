#include "srvcc/mlp.hpp"

namespace srvcc {

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh_fn;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus_fn;
  throw DataError("unknown activation: " + name);
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh_fn: return "tanh";
    case Activation::relu: return "relu";
    case Activation::softplus_fn: return "softplus";
  }
  throw DataError("unknown activation enum value");
}

static double apply_act(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh_fn: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::softplus_fn: return softplus(x);
  }
  return x;
}

static double act_deriv(Activation a, double pre, double post) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh_fn: return 1.0 - post * post;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::softplus_fn: return sigmoid(pre);
  }
  return 1.0;
}

Eigen::Index MlpParams::param_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Vec MlpParams::pack() const {
  Vec flat(param_count());
  Eigen::Index at = 0;
  for (const auto& l : layers) {
    flat.segment(at, l.weight.size()) = Eigen::Map<const Vec>(l.weight.data(), l.weight.size());
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  }
  return flat;
}

void MlpParams::unpack(const Vec& flat) {
  if (flat.size() != param_count()) throw DataError("mlp unpack: size mismatch");
  Eigen::Index at = 0;
  for (auto& l : layers) {
    Eigen::Map<Vec>(l.weight.data(), l.weight.size()) = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  }
}

void MlpParams::validate() const {
  if (layers.empty()) throw DataError("mlp has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rows() != l.bias.size()) {
      throw DataError("mlp layer " + std::to_string(i) + ": bias size " +
                      std::to_string(l.bias.size()) + " does not match weight rows " +
                      std::to_string(l.weight.rows()));
    }
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows()) {
      throw DataError("mlp layer " + std::to_string(i) + ": input dim " +
                      std::to_string(l.weight.cols()) + " does not match layer " +
                      std::to_string(i - 1) + " output dim " +
                      std::to_string(layers[i - 1].weight.rows()));
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw NumericError("mlp layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

MlpParams mlp_init(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw DataError("mlp_init: need dims.size() >= 2 and one activation per layer");
  }
  MlpParams mlp;
  mlp.layers.resize(dims.size() - 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    auto& l = mlp.layers[i];
    const int in = dims[i], out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    l.weight.resize(out, in);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) {
        l.weight(r, c) = (2.0 * rng.uniform() - 1.0) * bound;
      }
    }
    l.bias = Vec::Zero(out);
    l.act = acts[i];
  }
  return mlp;
}

MlpParams mlp_init(int input, const std::vector<int>& hidden, int output, Rng& rng,
                   Activation hidden_act) {
  std::vector<int> dims;
  dims.push_back(input);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output);
  std::vector<Activation> acts(hidden.size(), hidden_act);
  acts.push_back(Activation::identity);
  return mlp_init(dims, acts, rng);
}

Vec mlp_forward(const MlpParams& mlp, const Vec& x, MlpTrace* trace) {
  if (x.size() != mlp.input_dim()) {
    throw DataError("mlp_forward: input size " + std::to_string(x.size()) +
                    " does not match expected " + std::to_string(mlp.input_dim()));
  }
  if (trace) {
    trace->input = x;
    trace->pre.resize(mlp.layers.size());
    trace->post.resize(mlp.layers.size());
  }
  Vec h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    Vec pre = l.weight * h + l.bias;
    Vec post(pre.size());
    for (int j = 0; j < pre.size(); ++j) post[j] = apply_act(l.act, pre[j]);
    if (trace) {
      trace->pre[i] = pre;
      trace->post[i] = post;
    }
    h = std::move(post);
  }
  return h;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& mlp) {
  MlpGrads g;
  g.weight.reserve(mlp.layers.size());
  g.bias.reserve(mlp.layers.size());
  for (const auto& l : mlp.layers) {
    g.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vec::Zero(l.bias.size()));
  }
  return g;
}

void MlpGrads::add_scaled(const MlpGrads& other, double s) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += s * other.weight[i];
    bias[i] += s * other.bias[i];
  }
}

void MlpGrads::add_weight_decay(const MlpParams& mlp, double coef) {
  for (std::size_t i = 0; i < weight.size(); ++i) {
    weight[i] += 2.0 * coef * mlp.layers[i].weight;
    bias[i] += 2.0 * coef * mlp.layers[i].bias;
  }
}

void MlpGrads::setZero() {
  for (auto& w : weight) w.setZero();
  for (auto& b : bias) b.setZero();
}

Vec MlpGrads::pack() const {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) n += weight[i].size() + bias[i].size();
  Vec flat(n);
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    flat.segment(at, weight[i].size()) = Eigen::Map<const Vec>(weight[i].data(), weight[i].size());
    at += weight[i].size();
    flat.segment(at, bias[i].size()) = bias[i];
    at += bias[i].size();
  }
  return flat;
}

Vec mlp_backward(const MlpParams& mlp, const MlpTrace& trace, const Vec& output_grad,
                 MlpGrads* grads, double coef) {
  if (output_grad.size() != mlp.output_dim()) {
    throw DataError("mlp_backward: output_grad size mismatch");
  }
  Vec delta = output_grad;
  for (int i = static_cast<int>(mlp.layers.size()) - 1; i >= 0; --i) {
    const auto& l = mlp.layers[i];
    for (int j = 0; j < delta.size(); ++j) {
      delta[j] *= act_deriv(l.act, trace.pre[i][j], trace.post[i][j]);
    }
    const Vec& below = (i == 0) ? trace.input : trace.post[i - 1];
    if (grads) {
      grads->weight[i].noalias() += coef * delta * below.transpose();
      grads->bias[i] += coef * delta;
    }
    delta = l.weight.transpose() * delta;
  }
  return delta;
}

}  // namespace srvcc
