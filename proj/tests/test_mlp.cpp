#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "srvcc/mlp.hpp"
#include "srvcc/optim.hpp"

using namespace srvcc;

namespace {

double rel_err(const Vec& got, const Vec& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-10);
}

MlpParams random_mlp(const std::vector<int>& dims, Activation hidden, Rng& rng) {
  std::vector<Activation> acts(dims.size() - 1, hidden);
  acts.back() = Activation::identity;
  return mlp_init(dims, acts, rng);
}

}  // namespace

TEST_CASE("identity layer passes input through unchanged") {
  MlpParams mlp;
  mlp.layers.push_back({Mat::Identity(3, 3), Vec::Zero(3), Activation::identity});
  Vec x(3);
  x << 1.5, -2.0, 0.25;
  Vec y = mlp_forward(mlp, x);
  CHECK(y == x);
}

TEST_CASE("tanh layer with zero parameters maps everything to zero") {
  MlpParams mlp;
  mlp.layers.push_back({Mat::Zero(4, 2), Vec::Zero(4), Activation::tanh_fn});
  Vec x(2);
  x << 3.0, -7.0;
  CHECK(mlp_forward(mlp, x).isZero(0.0));
}

TEST_CASE("two-layer forward matches scalar recomputation") {
  MlpParams mlp;
  Mat w1(2, 2);
  w1 << 1.0, 2.0, 0.0, -1.0;
  Vec b1(2);
  b1 << 0.5, -0.5;
  Mat w2(1, 2);
  w2 << 1.0, -1.0;
  Vec b2(1);
  b2 << 0.25;
  mlp.layers.push_back({w1, b1, Activation::tanh_fn});
  mlp.layers.push_back({w2, b2, Activation::identity});

  Vec x(2);
  x << 0.3, -0.2;
  // plain scalar arithmetic, no shared code paths
  const double h0 = std::tanh(1.0 * 0.3 + 2.0 * (-0.2) + 0.5);
  const double h1 = std::tanh(0.0 * 0.3 + (-1.0) * (-0.2) - 0.5);
  const double want = h0 - h1 + 0.25;
  CHECK(mlp_forward(mlp, x)[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("relu and softplus activations at fixed points") {
  MlpParams mlp;
  mlp.layers.push_back({Mat::Identity(2, 2), Vec::Zero(2), Activation::relu});
  Vec x(2);
  x << -3.0, 2.0;
  Vec y = mlp_forward(mlp, x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 2.0);

  mlp.layers[0].act = Activation::softplus_fn;
  y = mlp_forward(mlp, x);
  CHECK(y[0] == doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(2.0 + std::log1p(std::exp(-2.0))).epsilon(1e-14));
}

TEST_CASE("backward through identity layer reproduces output_grad") {
  MlpParams mlp;
  mlp.layers.push_back({Mat::Identity(3, 3), Vec::Zero(3), Activation::identity});
  MlpTrace tr;
  Vec x(3);
  x << 0.1, 0.2, 0.3;
  mlp_forward(mlp, x, &tr);
  Vec g(3);
  g << -1.0, 2.0, 0.5;
  MlpGrads grads = MlpGrads::zeros_like(mlp);
  Vec gin = mlp_backward(mlp, tr, g, &grads);
  CHECK(gin == g);
  CHECK(grads.bias[0] == g);
  CHECK(grads.weight[0] == Mat(g * x.transpose()));
}

TEST_CASE("zero output_grad yields zero gradients everywhere") {
  Rng rng(7);
  MlpParams mlp = random_mlp({3, 5, 2}, Activation::tanh_fn, rng);
  MlpTrace tr;
  mlp_forward(mlp, rng.normal_vec(3), &tr);
  MlpGrads grads = MlpGrads::zeros_like(mlp);
  Vec gin = mlp_backward(mlp, tr, Vec::Zero(2), &grads);
  CHECK(gin.isZero(0.0));
  CHECK(grads.pack().isZero(0.0));
}

TEST_CASE("backward is linear in output_grad") {
  Rng rng(11);
  MlpParams mlp = random_mlp({4, 6, 3}, Activation::tanh_fn, rng);
  MlpTrace tr;
  mlp_forward(mlp, rng.normal_vec(4), &tr);
  Vec g1 = rng.normal_vec(3), g2 = rng.normal_vec(3);
  const double a = 1.7, b = -0.3;

  MlpGrads ga = MlpGrads::zeros_like(mlp), gb = MlpGrads::zeros_like(mlp),
           gc = MlpGrads::zeros_like(mlp);
  Vec ia = mlp_backward(mlp, tr, g1, &ga);
  Vec ib = mlp_backward(mlp, tr, g2, &gb);
  Vec ic = mlp_backward(mlp, tr, a * g1 + b * g2, &gc);

  CHECK((ic - (a * ia + b * ib)).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((gc.pack() - (a * ga.pack() + b * gb.pack())).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("parameter and input gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    Activation act = (seed % 2 == 0) ? Activation::tanh_fn : Activation::softplus_fn;
    MlpParams mlp = random_mlp({3, 4, 2}, act, rng);
    Vec x = rng.normal_vec(3);
    Vec probe = rng.normal_vec(2);

    MlpTrace tr;
    mlp_forward(mlp, x, &tr);
    MlpGrads grads = MlpGrads::zeros_like(mlp);
    Vec gin = mlp_backward(mlp, tr, probe, &grads);

    MlpParams scratch = mlp;
    Vec fd_params = finite_diff_gradient(
        [&](const Vec& p) {
          scratch.unpack(p);
          return probe.dot(mlp_forward(scratch, x));
        },
        mlp.pack());
    Vec fd_input = finite_diff_gradient([&](const Vec& xi) { return probe.dot(mlp_forward(mlp, xi)); }, x);

    CHECK(rel_err(grads.pack(), fd_params) <= 1e-5);
    CHECK(rel_err(gin, fd_input) <= 1e-5);
  }
}

TEST_CASE("initialisation is fan-in bounded, deterministic, biases zero") {
  Rng a(42), b(42), c(43);
  MlpParams m1 = random_mlp({10, 8, 4}, Activation::tanh_fn, a);
  MlpParams m2 = random_mlp({10, 8, 4}, Activation::tanh_fn, b);
  MlpParams m3 = random_mlp({10, 8, 4}, Activation::tanh_fn, c);
  CHECK(m1.pack() == m2.pack());
  CHECK(m1.pack() != m3.pack());
  CHECK(m1.layers[0].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(10.0));
  CHECK(m1.layers[1].weight.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(8.0));
  CHECK(m1.layers[0].bias.isZero(0.0));
  CHECK(m1.layers[1].bias.isZero(0.0));
}

TEST_CASE("shape validation names the offending layer") {
  MlpParams mlp;
  mlp.layers.push_back({Mat::Zero(3, 2), Vec::Zero(3), Activation::identity});
  mlp.layers.push_back({Mat::Zero(2, 4), Vec::Zero(2), Activation::identity});
  CHECK_THROWS_WITH_AS(mlp.validate(), doctest::Contains("layer 1"), DataError);
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Vec p(3);
  p << 1.0, -2.0, 0.5;
  Vec before = p;
  AdamState st(3);
  AdamConfig cfg;
  adam_step(p, Vec::Zero(3), st, cfg);
  CHECK(p == before);
}

TEST_CASE("adam first step on w^2 from w=1 decreases w by about lr") {
  Vec w(1);
  w << 1.0;
  AdamState st(1);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(w, Vec::Constant(1, 2.0 * w[0]), st, cfg);
  CHECK(std::abs(w[0] - 0.9) < 1e-8);
}

TEST_CASE("adam drives w^2 near zero and matches a scalar recursion oracle") {
  Vec w(1);
  w << 1.0;
  AdamState st(1);
  AdamConfig cfg;
  cfg.lr = 0.1;

  // textbook update with plain doubles
  double ow = 1.0, om = 0.0, ov = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * w[0];
    adam_step(w, Vec::Constant(1, g), st, cfg);

    const double og = 2.0 * ow;
    om = 0.9 * om + 0.1 * og;
    ov = 0.999 * ov + 0.001 * og * og;
    const double mhat = om / (1.0 - std::pow(0.9, t));
    const double vhat = ov / (1.0 - std::pow(0.999, t));
    ow -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);

    CHECK(std::abs(w[0] - ow) <= 1e-14);
  }
  CHECK(std::abs(w[0]) < 0.1);
}

TEST_CASE("adam runs are bit-identical for identical inputs") {
  Rng rng(5);
  Vec g1 = rng.normal_vec(6), g2 = rng.normal_vec(6);
  Vec pa = Vec::LinSpaced(6, -1.0, 1.0), pb = pa;
  AdamState sa(6), sb(6);
  AdamConfig cfg;
  adam_step(pa, g1, sa, cfg);
  adam_step(pa, g2, sa, cfg);
  adam_step(pb, g1, sb, cfg);
  adam_step(pb, g2, sb, cfg);
  CHECK(pa == pb);
}

TEST_CASE("finite differences recover the gradient of a quadratic exactly") {
  Mat A(3, 3);
  A << 2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 1.5;
  Vec p(3);
  p << 0.4, -1.0, 0.7;
  Vec fd = finite_diff_gradient([&](const Vec& v) { return 0.5 * v.dot(A * v); }, p);
  CHECK(rel_err(fd, A * p) <= 1e-9);
}
