#pragma once

#include <vector>

#include "srvcc/common.hpp"

namespace srvcc {

// Best-match clustering accuracy: optimal one-to-one assignment of predicted
// clusters to true classes on the contingency table, matched count / total.
double accuracy_hungarian(const std::vector<int>& pred, const std::vector<int>& truth);

// I(pred;truth) normalized by the arithmetic mean of the two entropies;
// 0 by convention when either labeling is constant.
double nmi(const std::vector<int>& pred, const std::vector<int>& truth);

// Maximum-total-score one-to-one assignment on a square score matrix.
double assignment_max_score(const Mat& score);

}  // namespace srvcc
