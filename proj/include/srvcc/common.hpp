#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace srvcc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Arr = Eigen::ArrayXd;
using MaskMat = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Input/format problems (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite losses/gradients, failed optimisation (CLI exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr double kLog2Pi = 1.8378770664093454836;

double logsumexp(const Vec& v);

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// d softplus / dx
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Inverse of y = softplus(x), y > 0.
inline double softplus_inv(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline double log_normal_pdf(double x, double mean, double std) {
  const double u = (x - mean) / std;
  return -std::log(std) - 0.5 * u * u - 0.5 * kLog2Pi;
}

void check_finite(const Vec& v, const char* what);
void check_finite(const Mat& m, const char* what);
void check_finite(double x, const char* what);

// Deterministic random stream.  The engine is the standard mt19937_64 (its
// sequence is pinned by the standard); all distributions are implemented here
// so that draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : engine_(seed), seed_hash_(seed ^ 0x6a09e667f3bcc908ULL) {}

  // [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // N(0, 1) via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Vec normal_vec(int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // {0, ..., n-1}, rejection-free modulo bias is irrelevant at our sizes but
  // avoided anyway via 53-bit uniform.
  int uniform_int(int n) {
    return std::min(n - 1, static_cast<int>(uniform() * n));
  }

  // Index draw from an (unnormalised) nonnegative weight vector.
  int categorical(const Vec& weights) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw NumericError("categorical: weights sum to zero");
    double u = uniform() * total;
    for (int i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return i;
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
      std::swap(items[i], items[uniform_int(i + 1)]);
    }
  }

  // Child stream that is independent of (and does not advance) this one.
  Rng split(std::uint64_t tag) const {
    std::uint64_t h = seed_hash_ ^ (tag + 0x9e3779b97f4a7c15ULL);
    h ^= h >> 30; h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27; h *= 0x94d049bb133111ebULL;
    h ^= h >> 31;
    Rng child(h);
    child.seed_hash_ = h;
    return child;
  }

  std::string serialize() const;
  void deserialize(const std::string& s);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_hash_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace srvcc
