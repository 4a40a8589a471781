#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "srvcc/data.hpp"
#include "srvcc/metrics.hpp"

using namespace srvcc;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = "data_test_" + name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// exhaustive best matching on the padded contingency, independent of the
// assignment solver
double brute_force_acc(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::map<int, int> pmap, tmap;
  for (int a : pred) pmap.emplace(a, static_cast<int>(pmap.size()));
  for (int b : truth) tmap.emplace(b, static_cast<int>(tmap.size()));
  const int k = std::max(static_cast<int>(pmap.size()), static_cast<int>(tmap.size()));
  Mat counts = Mat::Zero(k, k);
  for (std::size_t i = 0; i < pred.size(); ++i) counts(pmap[pred[i]], tmap[truth[i]]) += 1.0;

  std::vector<int> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double total = 0.0;
    for (int a = 0; a < k; ++a) total += counts(a, perm[a]);
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(pred.size());
}

double brute_force_nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  const double total = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pa[pred[i]] += 1.0 / total;
    pb[truth[i]] += 1.0 / total;
    pab[{pred[i], truth[i]}] += 1.0 / total;
  }
  double hp = 0.0, ht = 0.0, info = 0.0;
  for (auto& [a, p] : pa) hp -= p * std::log(p);
  for (auto& [b, p] : pb) ht -= p * std::log(p);
  for (auto& [key, p] : pab) info += p * std::log(p / (pa[key.first] * pb[key.second]));
  if (hp <= 0.0 || ht <= 0.0) return 0.0;
  return info / (0.5 * (hp + ht));
}

}  // namespace

TEST_CASE("dense csv parsing") {
  DataMatrix m = load_matrix(write_temp("plain.csv", "1,2\n3,4\n"), MatrixFormat::csv_dense);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(m.values(1, 0) == 3.0);
  CHECK(m.fully_observed());

  DataMatrix gap = load_matrix(write_temp("gap.csv", "1,,3\n"), MatrixFormat::csv_dense);
  CHECK(gap.cols() == 3);
  CHECK(gap.mask(0, 1) == 0);
  CHECK(gap.mask(0, 0) == 1);
  CHECK(gap.observed_count() == 2);

  // negative numbers, exponents, surrounding spaces
  DataMatrix fancy =
      load_matrix(write_temp("fancy.csv", " -1.5 , 2e-3\n0.25,-4E1\n"), MatrixFormat::csv_dense);
  CHECK(fancy.values(0, 0) == -1.5);
  CHECK(fancy.values(0, 1) == 2e-3);
  CHECK(fancy.values(1, 1) == -40.0);

  SUBCASE("each malformed input gets its own error") {
    CHECK_THROWS_WITH_AS(load_matrix(write_temp("empty.csv", ""), MatrixFormat::csv_dense),
                         doctest::Contains("empty file"), DataError);
    CHECK_THROWS_WITH_AS(load_matrix(write_temp("ragged.csv", "1,2\n3\n"),
                                     MatrixFormat::csv_dense),
                         doctest::Contains("ragged row"), DataError);
    CHECK_THROWS_WITH_AS(load_matrix(write_temp("alpha.csv", "1,frog\n"),
                                     MatrixFormat::csv_dense),
                         doctest::Contains("non-numeric"), DataError);
    CHECK_THROWS_AS(load_matrix("no_such_file_anywhere.csv", MatrixFormat::csv_dense), DataError);
  }
}

TEST_CASE("labeled csv parsing") {
  const std::string path = write_temp("labeled.csv", "id,c1,c2\nr1,1,2\nr2,,4\n");
  DataMatrix m = load_matrix(path, MatrixFormat::labeled_csv);
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 2);
  CHECK(m.row_names == std::vector<std::string>{"r1", "r2"});
  CHECK(m.col_names == std::vector<std::string>{"c1", "c2"});
  CHECK(m.values(0, 1) == 2.0);
  CHECK(m.mask(1, 0) == 0);

  CHECK_THROWS_AS(load_matrix(write_temp("tiny.csv", "x\n"), MatrixFormat::labeled_csv),
                  DataError);
}

TEST_CASE("save and load round-trip values and masks exactly") {
  Rng rng(3);
  DataMatrix m;
  m.values.resize(4, 3);
  m.mask.resize(4, 3);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      m.values(i, j) = rng.normal() * std::pow(10.0, rng.uniform_int(7) - 3);
      m.mask(i, j) = rng.uniform() < 0.8 ? 1 : 0;
      if (m.mask(i, j) == 0) m.values(i, j) = 0.0;
    }
  }
  m.mask(0, 0) = 1;  // keep at least one observed cell per row 0
  const std::string path = "data_test_roundtrip.csv";
  save_matrix(path, m);
  DataMatrix back = load_matrix(path, MatrixFormat::csv_dense);
  CHECK((back.mask - m.mask).lpNorm<Eigen::Infinity>() == 0);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (m.mask(i, j) != 0) CHECK(back.values(i, j) == m.values(i, j));
    }
  }
}

TEST_CASE("range scaling maps observed cells onto the unit interval") {
  DataMatrix m;
  m.values.resize(1, 2);
  m.values << 0.0, 10.0;
  m.mask = MaskMat::Constant(1, 2, 1);
  DataMatrix scaled = preprocess(m, PreprocessMode::minmax01);
  CHECK(scaled.values(0, 0) == 0.0);
  CHECK(scaled.values(0, 1) == 1.0);

  Rng rng(17);
  DataMatrix big;
  big.values.resize(6, 5);
  big.mask = MaskMat::Constant(6, 5, 1);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 5; ++j) big.values(i, j) = 3.0 * rng.normal();
  }
  big.values(2, 2) = -1000.0;  // extreme value hidden by the mask
  big.mask(2, 2) = 0;
  DataMatrix out = preprocess(big, PreprocessMode::minmax01);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 5; ++j) {
      if (out.mask(i, j) == 0) continue;
      CHECK(out.values(i, j) >= 0.0);
      CHECK(out.values(i, j) <= 1.0);
    }
  }
  CHECK(out.mask(2, 2) == 0);
  CHECK(out.values.minCoeff() >= -1e-15);  // the masked extreme did not leak into the range

  DataMatrix flat;
  flat.values = Mat::Constant(2, 2, 5.0);
  flat.mask = MaskMat::Constant(2, 2, 1);
  CHECK_THROWS_AS(preprocess(flat, PreprocessMode::minmax01), DataError);
  CHECK(preprocess(flat, PreprocessMode::none).values == flat.values);
}

TEST_CASE("tf-idf weighting followed by unit row length") {
  DataMatrix m;
  m.values.resize(4, 2);
  m.values << 2.0, 0.0, 0.0, 3.0, 0.0, 5.0, 0.0, 7.0;
  m.mask = MaskMat::Constant(4, 2, 1);
  DataMatrix out = preprocess(m, PreprocessMode::tfidf_l2);

  // term 0 appears in 1 of 4 docs, term 1 in 3 of 4
  CHECK(std::abs(out.values(0, 0) - 1.0) <= 1e-12);  // lone nonzero -> unit row
  CHECK(out.values(0, 1) == 0.0);
  // idf of term 1 is log(4/4) = 0, so its rows collapse to zero and stay there
  CHECK(out.values.row(2).norm() == 0.0);

  Rng rng(29);
  DataMatrix counts;
  counts.values.resize(8, 6);
  counts.mask = MaskMat::Constant(8, 6, 1);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 6; ++j) {
      counts.values(i, j) = rng.uniform() < 0.4 ? static_cast<double>(rng.uniform_int(9)) : 0.0;
    }
  }
  counts.values(0, 0) = 2.0;  // ensure at least one surviving row
  DataMatrix weighted = preprocess(counts, PreprocessMode::tfidf_l2);
  for (int i = 0; i < 8; ++i) {
    const double norm = weighted.values.row(i).norm();
    if (norm > 0.0) CHECK(std::abs(norm - 1.0) <= 1e-12);
  }

  DataMatrix neg;
  neg.values = Mat::Constant(2, 2, -1.0);
  neg.mask = MaskMat::Constant(2, 2, 1);
  CHECK_THROWS_AS(preprocess(neg, PreprocessMode::tfidf_l2), DataError);
}

TEST_CASE("row and column views zero-impute hidden cells") {
  DataMatrix m;
  m.values.resize(2, 3);
  m.values << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  m.mask = MaskMat::Constant(2, 3, 1);
  m.mask(0, 1) = 0;
  m.values(0, 1) = 0.0;

  Vec r0 = matrix_row(m, 0);
  CHECK(r0[0] == 1.0);
  CHECK(r0[1] == 0.0);
  CHECK(r0[2] == 3.0);
  CHECK(matrix_col(m, 1)[0] == 0.0);
  CHECK(matrix_col(m, 1)[1] == 5.0);

  CHECK(row_mask(m, 1).size() == 0);  // fully observed row signals with emptiness
  Vec w0 = row_mask(m, 0);
  REQUIRE(w0.size() == 3);
  CHECK(w0[1] == 0.0);
  CHECK(w0[0] == 1.0);
  CHECK(col_mask(m, 1).size() == 2);
  CHECK(col_mask(m, 0).size() == 0);
}

TEST_CASE("checkerboard generator produces clean separated blocks") {
  SyntheticSpec spec;
  spec.n = 30;
  spec.d = 20;
  spec.g = 3;
  spec.m = 2;
  spec.noise_level = 0.0;
  spec.seed = 7;
  SyntheticData data = synth_checkerboard(spec);
  data.matrix.validate();

  // within-block variance zero, distinct blocks distinct
  std::map<std::pair<int, int>, double> block_value;
  for (int i = 0; i < 30; ++i) {
    for (int j = 0; j < 20; ++j) {
      const auto key = std::make_pair(data.row_labels[i], data.col_labels[j]);
      auto it = block_value.find(key);
      if (it == block_value.end()) {
        block_value[key] = data.matrix.values(i, j);
      } else {
        CHECK(data.matrix.values(i, j) == it->second);
      }
    }
  }
  CHECK(block_value.size() == 6);
  std::vector<double> uniques;
  for (auto& [key, v] : block_value) uniques.push_back(v);
  std::sort(uniques.begin(), uniques.end());
  CHECK(std::adjacent_find(uniques.begin(), uniques.end()) == uniques.end());

  // balanced blocks
  std::vector<int> row_counts(3, 0);
  for (int lab : data.row_labels) row_counts[lab]++;
  CHECK(*std::max_element(row_counts.begin(), row_counts.end()) -
            *std::min_element(row_counts.begin(), row_counts.end()) <=
        1);

  // the shuffle really moved things
  CHECK_FALSE(std::is_sorted(data.row_labels.begin(), data.row_labels.end()));

  // metric pipeline sanity on the ground truth itself
  CHECK(accuracy_hungarian(data.row_labels, data.row_labels) == 1.0);
  CHECK(nmi(data.col_labels, data.col_labels) == 1.0);
}

TEST_CASE("checkerboard generation is reproducible and missingness calibrated") {
  SyntheticSpec spec;
  spec.n = 100;
  spec.d = 100;
  spec.g = 4;
  spec.m = 3;
  spec.noise_level = 0.5;
  spec.missing_fraction = 0.3;
  spec.seed = 11;
  SyntheticData a = synth_checkerboard(spec);
  SyntheticData b = synth_checkerboard(spec);
  CHECK(a.matrix.values == b.matrix.values);
  CHECK(a.matrix.mask == b.matrix.mask);
  CHECK(a.row_labels == b.row_labels);
  CHECK(a.col_labels == b.col_labels);

  const double off = 1.0 - static_cast<double>(a.matrix.observed_count()) / (100.0 * 100.0);
  CHECK(std::abs(off - 0.3) <= 0.02);

  SyntheticSpec other = spec;
  other.seed = 12;
  CHECK_FALSE(synth_checkerboard(other).matrix.values == a.matrix.values);

  SUBCASE("invalid specs are rejected") {
    SyntheticSpec bad = spec;
    bad.g = 200;
    CHECK_THROWS_AS(synth_checkerboard(bad), DataError);
    bad = spec;
    bad.missing_fraction = 1.0;
    CHECK_THROWS_AS(synth_checkerboard(bad), DataError);
    bad = spec;
    bad.noise_level = 1.5;
    CHECK_THROWS_AS(synth_checkerboard(bad), DataError);
  }
}

TEST_CASE("assignment solver maximizes the matched total") {
  Mat s(2, 2);
  s << 1.0, 2.0, 3.0, 4.0;
  CHECK(assignment_max_score(s) == 5.0);  // anti-diagonal beats the diagonal
  Mat t(3, 3);
  t << 10.0, 0.0, 0.0, 0.0, 10.0, 0.0, 0.0, 0.0, 10.0;
  CHECK(assignment_max_score(t) == 30.0);
  CHECK_THROWS_AS(assignment_max_score(Mat::Zero(2, 3)), DataError);
}

TEST_CASE("clustering accuracy against exhaustive matching") {
  CHECK(accuracy_hungarian({0, 0, 1, 1}, {1, 1, 0, 2}) == 0.75);
  CHECK(accuracy_hungarian({5, 5, 9}, {5, 5, 9}) == 1.0);
  CHECK(accuracy_hungarian({1, 1, 0}, {0, 0, 1}) == 1.0);  // pure relabeling

  Rng rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = 1 + rng.uniform_int(8);
    std::vector<int> pred(len), truth(len);
    for (int i = 0; i < len; ++i) {
      pred[i] = rng.uniform_int(4);
      truth[i] = rng.uniform_int(3);
    }
    CHECK(accuracy_hungarian(pred, truth) == doctest::Approx(brute_force_acc(pred, truth)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(accuracy_hungarian({}, {}), DataError);
  CHECK_THROWS_AS(accuracy_hungarian({0, 1}, {0}), DataError);
}

TEST_CASE("normalized mutual information conventions and oracle") {
  CHECK(nmi({0, 1, 0, 1}, {1, 0, 1, 0}) == 1.0);
  CHECK(nmi({0, 0, 0}, {0, 1, 2}) == 0.0);  // constant side has zero entropy
  CHECK(nmi({0, 1, 2}, {5, 5, 5}) == 0.0);

  Rng rng(43);
  for (int trial = 0; trial < 200; ++trial) {
    const int len = 2 + rng.uniform_int(7);
    std::vector<int> pred(len), truth(len);
    for (int i = 0; i < len; ++i) {
      pred[i] = rng.uniform_int(3);
      truth[i] = rng.uniform_int(3);
    }
    const double got = nmi(pred, truth);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
    CHECK(got == doctest::Approx(std::clamp(brute_force_nmi(pred, truth), 0.0, 1.0))
                     .epsilon(1e-12));
  }

  // unrelated labelings carry almost no shared information at scale
  std::vector<int> big_pred(10000), big_truth(10000);
  for (int i = 0; i < 10000; ++i) {
    big_pred[i] = rng.uniform_int(4);
    big_truth[i] = rng.uniform_int(4);
  }
  CHECK(nmi(big_pred, big_truth) < 0.05);
}

TEST_CASE("co-cluster export reorders into blocks and round-trips") {
  SyntheticSpec spec;
  spec.n = 12;
  spec.d = 8;
  spec.g = 3;
  spec.m = 2;
  spec.noise_level = 0.0;
  spec.seed = 23;
  SyntheticData data = synth_checkerboard(spec);

  export_cocluster(data.matrix, data.row_labels, data.col_labels, "data_test_export");
  DataMatrix reordered = load_matrix("data_test_export_reordered.csv", MatrixFormat::csv_dense);

  // blocks are contiguous after the reorder: scanning rows in order, the
  // first column's value changes at most g-1 times
  int changes = 0;
  for (int i = 1; i < 12; ++i) {
    if (reordered.values(i, 0) != reordered.values(i - 1, 0)) ++changes;
  }
  CHECK(changes <= 2);

  const std::string perm = slurp("data_test_export_permutation.csv");
  CHECK(perm.find("row_new_to_old,") == 0);

  const std::string blocks = slurp("data_test_export_blocks.csv");
  CHECK(blocks.find("row_boundaries,4,8,12") != std::string::npos);
  CHECK(blocks.find("col_boundaries,4,8") != std::string::npos);

  SUBCASE("already sorted labels give the identity permutation") {
    std::vector<int> row_sorted(12), col_sorted(8);
    for (int i = 0; i < 12; ++i) row_sorted[i] = i / 4;
    for (int j = 0; j < 8; ++j) col_sorted[j] = j / 4;
    export_cocluster(data.matrix, row_sorted, col_sorted, "data_test_sorted");
    const std::string id_perm = slurp("data_test_sorted_permutation.csv");
    CHECK(id_perm.find("row_new_to_old,0,1,2,3,4,5,6,7,8,9,10,11\n") == 0);
    const std::string sorted_csv = slurp("data_test_sorted_reordered.csv");
    save_matrix("data_test_same.csv", data.matrix);
    CHECK(sorted_csv == slurp("data_test_same.csv"));
  }

  SUBCASE("inverse permutation restores the original bytes") {
    // parse the new-to-old row/col maps back out of the file
    auto parse_line = [](const std::string& all, const std::string& tag) {
      const auto at = all.find(tag);
      REQUIRE(at != std::string::npos);
      std::vector<int> out;
      std::size_t pos = at + tag.size();
      while (pos < all.size() && all[pos] != '\n') {
        REQUIRE(all[pos] == ',');
        std::size_t end = ++pos;
        while (end < all.size() && all[end] != ',' && all[end] != '\n') ++end;
        out.push_back(std::stoi(all.substr(pos, end - pos)));
        pos = end;
      }
      return out;
    };
    const std::string perms = slurp("data_test_export_permutation.csv");
    std::vector<int> row_map = parse_line(perms, "row_new_to_old");
    std::vector<int> col_map = parse_line(perms, "col_new_to_old");
    REQUIRE(row_map.size() == 12);
    REQUIRE(col_map.size() == 8);

    DataMatrix restored;
    restored.values.resize(12, 8);
    restored.mask.resize(12, 8);
    for (int i = 0; i < 12; ++i) {
      for (int j = 0; j < 8; ++j) {
        restored.values(row_map[i], col_map[j]) = reordered.values(i, j);
        restored.mask(row_map[i], col_map[j]) = reordered.mask(i, j);
      }
    }
    save_matrix("data_test_restored.csv", restored);
    save_matrix("data_test_original.csv", data.matrix);
    CHECK(slurp("data_test_restored.csv") == slurp("data_test_original.csv"));
  }

  CHECK_THROWS_AS(
      export_cocluster(data.matrix, std::vector<int>(5, 0), data.col_labels, "data_test_bad"),
      DataError);
}
