#include "srvcc/data.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>

namespace srvcc {

Eigen::Index DataMatrix::observed_count() const {
  return static_cast<Eigen::Index>(mask.cast<int>().sum());
}

bool DataMatrix::fully_observed() const { return observed_count() == values.size(); }

void DataMatrix::validate() const {
  if (values.size() == 0) throw DataError("matrix has no cells");
  if (mask.rows() != values.rows() || mask.cols() != values.cols()) {
    throw DataError("mask shape does not match the values");
  }
  if (!row_names.empty() && static_cast<Eigen::Index>(row_names.size()) != rows()) {
    throw DataError("row name count does not match the matrix");
  }
  if (!col_names.empty() && static_cast<Eigen::Index>(col_names.size()) != cols()) {
    throw DataError("column name count does not match the matrix");
  }
  for (Eigen::Index i = 0; i < rows(); ++i) {
    for (Eigen::Index j = 0; j < cols(); ++j) {
      if (mask(i, j) != 0 && !std::isfinite(values(i, j))) {
        throw NumericError("non-finite value at row " + std::to_string(i) + ", column " +
                           std::to_string(j));
      }
    }
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(trim(cur));
  return out;
}

double parse_cell(const std::string& field, Eigen::Index row, Eigen::Index col) {
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end == field.c_str() || *end != '\0') {
    throw DataError("non-numeric cell at row " + std::to_string(row) + ", column " +
                    std::to_string(col) + ": '" + field + "'");
  }
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw DataError("empty file '" + path + "'");
  return lines;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

DataMatrix load_matrix(const std::string& path, MatrixFormat format) {
  const std::vector<std::string> lines = read_lines(path);
  std::vector<std::vector<std::string>> grid;
  grid.reserve(lines.size());
  for (const std::string& line : lines) grid.push_back(split_fields(line));

  DataMatrix m;
  std::size_t header = 0, label_cols = 0;
  if (format == MatrixFormat::labeled_csv) {
    if (grid.size() < 2 || grid[0].size() < 2) {
      throw DataError("labeled file needs at least one data row and column");
    }
    header = 1;
    label_cols = 1;
    m.col_names.assign(grid[0].begin() + 1, grid[0].end());
  }

  const std::size_t n = grid.size() - header;
  const std::size_t width = grid[header].size();
  if (width <= label_cols) throw DataError("no data columns in '" + path + "'");
  const std::size_t d = width - label_cols;

  m.values = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  m.mask = MaskMat::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d), 1);
  for (std::size_t r = 0; r < n; ++r) {
    const std::vector<std::string>& row = grid[r + header];
    if (row.size() != width) {
      throw DataError("ragged row " + std::to_string(r + header) + " in '" + path + "': got " +
                      std::to_string(row.size()) + " fields, expected " + std::to_string(width));
    }
    if (label_cols > 0) m.row_names.push_back(row[0]);
    for (std::size_t c = 0; c < d; ++c) {
      const std::string& field = row[c + label_cols];
      const auto i = static_cast<Eigen::Index>(r);
      const auto j = static_cast<Eigen::Index>(c);
      if (field.empty()) {
        m.mask(i, j) = 0;
      } else {
        m.values(i, j) = parse_cell(field, i, j);
      }
    }
  }
  m.validate();
  return m;
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp + "'");
    out << content;
    if (!out) throw DataError("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move '" + tmp + "' into place");
  }
}

namespace {

std::string matrix_to_csv(const DataMatrix& m) {
  std::string out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      if (m.mask(i, j) != 0) out += format_value(m.values(i, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace

void save_matrix(const std::string& path, const DataMatrix& m) {
  m.validate();
  write_text_file(path, matrix_to_csv(m));
}

DataMatrix preprocess(const DataMatrix& m, PreprocessMode mode) {
  m.validate();
  if (mode == PreprocessMode::none) return m;

  DataMatrix out = m;
  if (mode == PreprocessMode::minmax01) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (m.mask(i, j) == 0) continue;
        lo = std::min(lo, m.values(i, j));
        hi = std::max(hi, m.values(i, j));
      }
    }
    if (!(hi > lo)) throw DataError("constant matrix cannot be range-scaled");
    const double span = hi - lo;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        out.values(i, j) = m.mask(i, j) != 0 ? (m.values(i, j) - lo) / span : 0.0;
      }
    }
    return out;
  }

  // tf-idf with document-frequency damping, then row-wise unit length
  const auto n = m.rows();
  Vec idf(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    double df = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (m.mask(i, j) == 0) continue;
      if (m.values(i, j) < 0.0) {
        throw DataError("negative count at row " + std::to_string(i) + ", column " +
                        std::to_string(j));
      }
      if (m.values(i, j) > 0.0) df += 1.0;
    }
    idf[j] = std::log(static_cast<double>(n) / (1.0 + df));
  }
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double norm_sq = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m.mask(i, j) != 0 ? m.values(i, j) * idf[j] : 0.0;
      out.values(i, j) = v;
      norm_sq += v * v;
    }
    if (norm_sq > 0.0) out.values.row(i) /= std::sqrt(norm_sq);
  }
  return out;
}

Vec matrix_row(const DataMatrix& m, Eigen::Index i) {
  Vec x(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) x[j] = m.mask(i, j) != 0 ? m.values(i, j) : 0.0;
  return x;
}

Vec matrix_col(const DataMatrix& m, Eigen::Index j) {
  Vec x(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) x[i] = m.mask(i, j) != 0 ? m.values(i, j) : 0.0;
  return x;
}

Vec row_mask(const DataMatrix& m, Eigen::Index i) {
  if (m.mask.row(i).cast<int>().sum() == static_cast<int>(m.cols())) return Vec();
  Vec w(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) w[j] = m.mask(i, j) != 0 ? 1.0 : 0.0;
  return w;
}

Vec col_mask(const DataMatrix& m, Eigen::Index j) {
  if (m.mask.col(j).cast<int>().sum() == static_cast<int>(m.rows())) return Vec();
  Vec w(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) w[i] = m.mask(i, j) != 0 ? 1.0 : 0.0;
  return w;
}

void SyntheticSpec::validate() const {
  if (n < 1 || d < 1) throw DataError("synthetic matrix needs positive dimensions");
  if (g < 1 || m < 1 || g > n || m > d) {
    throw DataError("block counts must fit inside the matrix");
  }
  if (!(separation > 0.0)) throw DataError("block separation must be positive");
  if (noise_level < 0.0 || noise_level > 1.0) throw DataError("noise level outside [0,1]");
  if (missing_fraction < 0.0 || missing_fraction >= 1.0) {
    throw DataError("missing fraction outside [0,1)");
  }
}

SyntheticData synth_checkerboard(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // contiguous balanced block assignment before shuffling
  auto row_block = [&](Eigen::Index i) { return static_cast<int>(i * spec.g / spec.n); };
  auto col_block = [&](Eigen::Index j) { return static_cast<int>(j * spec.m / spec.d); };

  // block means sit on a separated grid, dealt out in a seeded random order
  std::vector<int> grid(static_cast<std::size_t>(spec.g) * spec.m);
  std::iota(grid.begin(), grid.end(), 0);
  rng.shuffle(grid);

  const double noise_std = spec.noise_level * spec.separation;
  Mat values(spec.n, spec.d);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    for (Eigen::Index j = 0; j < spec.d; ++j) {
      const double mean = spec.separation * grid[row_block(i) * spec.m + col_block(j)];
      values(i, j) = mean + noise_std * rng.normal();
    }
  }

  MaskMat mask = MaskMat::Constant(spec.n, spec.d, 1);
  if (spec.missing_fraction > 0.0) {
    for (Eigen::Index i = 0; i < spec.n; ++i) {
      for (Eigen::Index j = 0; j < spec.d; ++j) {
        if (rng.uniform() < spec.missing_fraction) mask(i, j) = 0;
      }
    }
  }

  std::vector<int> row_perm(spec.n), col_perm(spec.d);
  std::iota(row_perm.begin(), row_perm.end(), 0);
  std::iota(col_perm.begin(), col_perm.end(), 0);
  rng.shuffle(row_perm);
  rng.shuffle(col_perm);

  SyntheticData out;
  out.matrix.values.resize(spec.n, spec.d);
  out.matrix.mask.resize(spec.n, spec.d);
  out.row_labels.resize(spec.n);
  out.col_labels.resize(spec.d);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    out.row_labels[i] = row_block(row_perm[i]);
    for (Eigen::Index j = 0; j < spec.d; ++j) {
      out.matrix.values(i, j) = values(row_perm[i], col_perm[j]);
      out.matrix.mask(i, j) = mask(row_perm[i], col_perm[j]);
    }
  }
  for (Eigen::Index j = 0; j < spec.d; ++j) out.col_labels[j] = col_block(col_perm[j]);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    for (Eigen::Index j = 0; j < spec.d; ++j) {
      if (out.matrix.mask(i, j) == 0) out.matrix.values(i, j) = 0.0;
    }
  }
  return out;
}

namespace {

std::vector<int> sorted_by_label(const std::vector<int>& labels) {
  std::vector<int> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return labels[a] < labels[b]; });
  return order;
}

std::string boundary_line(const char* tag, const std::vector<int>& labels,
                          const std::vector<int>& order) {
  std::string line = tag;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    if (k == order.size() || labels[order[k]] != labels[order[k - 1]]) {
      line += ',' + std::to_string(k);
    }
  }
  return line + '\n';
}

std::string permutation_line(const char* tag, const std::vector<int>& order) {
  std::string line = tag;
  for (int idx : order) line += ',' + std::to_string(idx);
  return line + '\n';
}

}  // namespace

void export_cocluster(const DataMatrix& m, const std::vector<int>& row_labels,
                      const std::vector<int>& col_labels, const std::string& out_prefix) {
  m.validate();
  if (static_cast<Eigen::Index>(row_labels.size()) != m.rows() ||
      static_cast<Eigen::Index>(col_labels.size()) != m.cols()) {
    throw DataError("label lengths do not match the matrix");
  }
  const std::vector<int> row_order = sorted_by_label(row_labels);
  const std::vector<int> col_order = sorted_by_label(col_labels);

  DataMatrix reordered;
  reordered.values.resize(m.rows(), m.cols());
  reordered.mask.resize(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      reordered.values(i, j) = m.values(row_order[i], col_order[j]);
      reordered.mask(i, j) = m.mask(row_order[i], col_order[j]);
    }
  }

  save_matrix(out_prefix + "_reordered.csv", reordered);
  write_text_file(out_prefix + "_blocks.csv",
                  boundary_line("row_boundaries", row_labels, row_order) +
                      boundary_line("col_boundaries", col_labels, col_order));
  write_text_file(out_prefix + "_permutation.csv",
                  permutation_line("row_new_to_old", row_order) +
                      permutation_line("col_new_to_old", col_order));
}

}  // namespace srvcc
