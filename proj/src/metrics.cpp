#include "srvcc/metrics.hpp"

#include <algorithm>
#include <limits>
#include <map>

namespace srvcc {

namespace {

// contingency counts with labels compacted to 0..k-1 per side
Mat contingency(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty()) throw DataError("metrics need at least one label");
  if (pred.size() != truth.size()) throw DataError("label vectors differ in length");
  std::map<int, int> pmap, tmap;
  for (int a : pred) pmap.emplace(a, static_cast<int>(pmap.size()));
  for (int b : truth) tmap.emplace(b, static_cast<int>(tmap.size()));
  Mat counts = Mat::Zero(static_cast<Eigen::Index>(pmap.size()),
                         static_cast<Eigen::Index>(tmap.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    counts(pmap[pred[i]], tmap[truth[i]]) += 1.0;
  }
  return counts;
}

}  // namespace

double assignment_max_score(const Mat& score) {
  if (score.rows() != score.cols() || score.rows() == 0) {
    throw DataError("assignment needs a non-empty square score matrix");
  }
  const int n = static_cast<int>(score.rows());
  const Mat cost = -score;  // potentials method minimizes
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  double total = 0.0;
  for (int j = 1; j <= n; ++j) {
    if (match[j] != 0) total += score(match[j] - 1, j - 1);
  }
  return total;
}

double accuracy_hungarian(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Mat counts = contingency(pred, truth);
  const Eigen::Index k = std::max(counts.rows(), counts.cols());
  Mat square = Mat::Zero(k, k);
  square.topLeftCorner(counts.rows(), counts.cols()) = counts;
  return assignment_max_score(square) / static_cast<double>(pred.size());
}

double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  const Mat counts = contingency(pred, truth);
  const double total = static_cast<double>(pred.size());
  const Vec pa = counts.rowwise().sum() / total;
  const Vec pb = counts.colwise().sum().transpose() / total;

  auto entropy = [](const Vec& p) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return h;
  };
  const double hp = entropy(pa);
  const double ht = entropy(pb);
  if (hp <= 0.0 || ht <= 0.0) return 0.0;

  double info = 0.0;
  for (Eigen::Index a = 0; a < counts.rows(); ++a) {
    for (Eigen::Index b = 0; b < counts.cols(); ++b) {
      const double p = counts(a, b) / total;
      if (p > 0.0) info += p * std::log(p / (pa[a] * pb[b]));
    }
  }
  return std::clamp(info / (0.5 * (hp + ht)), 0.0, 1.0);
}

}  // namespace srvcc
