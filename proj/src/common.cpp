#include "srvcc/common.hpp"

#include <sstream>

namespace srvcc {

double logsumexp(const Vec& v) {
  if (v.size() == 0) throw NumericError("logsumexp: empty vector");
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a stray +inf/nan) propagates
  double s = 0.0;
  for (int i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) {
    throw NumericError(std::string("non-finite value in ") + what);
  }
}

void check_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) {
    throw NumericError(std::string("non-finite entries in ") + what);
  }
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite entries in ") + what);
  }
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << seed_hash_ << ' ' << (has_spare_ ? 1 : 0);
  if (has_spare_) {
    os << ' ';
    os.precision(17);
    os << spare_;
  }
  return os.str();
}

void Rng::deserialize(const std::string& s) {
  std::istringstream is(s);
  int spare_flag = 0;
  is >> engine_ >> seed_hash_ >> spare_flag;
  has_spare_ = spare_flag != 0;
  if (has_spare_) is >> spare_;
  if (!is) throw DataError("malformed random-stream state");
}

}  // namespace srvcc
