#pragma once

#include <string>
#include <vector>

#include "srvcc/common.hpp"

namespace srvcc {

// Dense matrix with per-cell presence flags. Masked cells are excluded from
// every statistic and loss; their stored value is meaningless (kept at 0).
struct DataMatrix {
  Mat values;
  MaskMat mask;
  std::vector<std::string> row_names;  // optional, evaluation only
  std::vector<std::string> col_names;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  Eigen::Index observed_count() const;
  bool fully_observed() const;
  void validate() const;
};

enum class MatrixFormat { csv_dense, labeled_csv };
enum class PreprocessMode { none, minmax01, tfidf_l2 };

DataMatrix load_matrix(const std::string& path, MatrixFormat format);

// Dense CSV with '.' decimals; masked cells are written as empty fields.
void save_matrix(const std::string& path, const DataMatrix& m);

// Write-then-rename so a crash never leaves a truncated file behind.
void write_text_file(const std::string& path, const std::string& content);

DataMatrix preprocess(const DataMatrix& m, PreprocessMode mode);

// Row i as a dense vector with masked dims zero-imputed; likewise columns.
Vec matrix_row(const DataMatrix& m, Eigen::Index i);
Vec matrix_col(const DataMatrix& m, Eigen::Index j);
// Per-entry observation weights for the reconstruction term; an empty vector
// signals a fully observed slice (the cheap common case).
Vec row_mask(const DataMatrix& m, Eigen::Index i);
Vec col_mask(const DataMatrix& m, Eigen::Index j);

struct SyntheticSpec {
  Eigen::Index n = 200;
  Eigen::Index d = 100;
  int g = 4;  // true row blocks
  int m = 3;  // true column blocks
  double separation = 1.0;
  double noise_level = 0.3;      // additive std as a fraction of separation
  double missing_fraction = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  DataMatrix matrix;
  std::vector<int> row_labels;  // ground truth in post-shuffle order
  std::vector<int> col_labels;
};

// Balanced checkerboard: block means on a separated grid, Gaussian noise,
// uniform missingness, then independent row/column shuffles.
SyntheticData synth_checkerboard(const SyntheticSpec& spec);

// Writes <prefix>_reordered.csv (rows/cols sorted by cluster, stable by
// original index), <prefix>_blocks.csv (cumulative boundary indices) and
// <prefix>_permutation.csv (new-to-old index maps).
void export_cocluster(const DataMatrix& m, const std::vector<int>& row_labels,
                      const std::vector<int>& col_labels, const std::string& out_prefix);

}  // namespace srvcc
