#pragma once

#include "srvcc/common.hpp"

namespace srvcc {

enum class Activation { identity, tanh_fn, relu, softplus_fn };

Activation activation_from_string(const std::string& name);
std::string activation_name(Activation a);

struct MlpLayer {
  Mat weight;  // out x in
  Vec bias;    // out
  Activation act = Activation::identity;
};

struct MlpParams {
  std::vector<MlpLayer> layers;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
  Eigen::Index param_count() const;

  Vec pack() const;
  void unpack(const Vec& flat);

  // Throws DataError naming the offending layer on shape mismatch,
  // NumericError on non-finite parameters.
  void validate() const;
};

// Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
MlpParams mlp_init(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng);

// Hidden layers share one width/activation, output layer is linear.
MlpParams mlp_init(int input, const std::vector<int>& hidden, int output, Rng& rng,
                   Activation hidden_act = Activation::tanh_fn);

struct MlpTrace {
  Vec input;
  std::vector<Vec> pre;   // pre-activation per layer
  std::vector<Vec> post;  // post-activation per layer
};

Vec mlp_forward(const MlpParams& mlp, const Vec& x, MlpTrace* trace = nullptr);

struct MlpGrads {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  static MlpGrads zeros_like(const MlpParams& mlp);
  void add_scaled(const MlpGrads& other, double s);
  void add_weight_decay(const MlpParams& mlp, double coef);  // += coef * 2 * theta
  void setZero();
  Vec pack() const;
};

// Backpropagates output_grad through the traced forward pass.  Parameter
// gradients are accumulated into *grads scaled by coef; the return value is
// the gradient with respect to the input.
Vec mlp_backward(const MlpParams& mlp, const MlpTrace& trace, const Vec& output_grad,
                 MlpGrads* grads = nullptr, double coef = 1.0);

}  // namespace srvcc
