#include <doctest.h>

#include <cmath>
#include <limits>

#include "raffnet/evaluation.hpp"
#include "support.hpp"

using namespace raffnet;

namespace {

double dist(const Matrix& x, Index i, Index j) {
  double s = 0.0;
  for (Index k = 0; k < x.cols(); ++k) s += (x(i, k) - x(j, k)) * (x(i, k) - x(j, k));
  return std::sqrt(s);
}

std::pair<double, double> distance_oracle(const Matrix& x, const std::vector<int>& labels, bool all_pairs) {
  std::map<int, std::vector<Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(static_cast<Index>(i));
  double intra = 0.0;
  int intra_n = 0;
  for (const auto& [_, idx] : members) {
    if (idx.size() < 2) continue;
    double s = 0.0;
    int n = 0;
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b) s += dist(x, idx[a], idx[b]), ++n;
    intra += s / n;
    ++intra_n;
  }
  double inter = 0.0;
  int inter_n = 0;
  for (auto a = members.begin(); a != members.end(); ++a)
    for (auto b = std::next(a); b != members.end(); ++b) {
      if (all_pairs) {
        double s = 0.0;
        for (Index i : a->second)
          for (Index j : b->second) s += dist(x, i, j);
        inter += s / static_cast<double>(a->second.size() * b->second.size());
      } else {
        double s = 0.0;
        for (Index k = 0; k < x.cols(); ++k) {
          double ca = 0.0, cb = 0.0;
          for (Index i : a->second) ca += x(i, k);
          for (Index j : b->second) cb += x(j, k);
          const double d = ca / a->second.size() - cb / b->second.size();
          s += d * d;
        }
        inter += std::sqrt(s);
      }
      ++inter_n;
    }
  return {intra / intra_n, inter / inter_n};
}

// Cyclic Jacobi rotations on a small symmetric matrix.
void jacobi(Matrix a, Vector& values, Matrix& vectors) {
  const Index n = a.rows();
  vectors = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = vectors(k, p), vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
  }
  values = a.diagonal();
}

}  // namespace

TEST_CASE("macro average of reference rows") {
  CHECK(macro_avg({100, 100, 100, 29.21}) == 82.30);
  CHECK(macro_avg({86, 91, 91, 96}) == 91.00);
  CHECK(macro_avg({84, 86, 90, 88}) == 87.00);
  CHECK(macro_avg({91, 78, 92, 92}) == 88.25);
  CHECK(macro_avg({100, 100, 100, 58.43}) == 89.61);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK(macro_avg({100, nan, 50, nan}) == 75.00);
}

TEST_CASE("round half up") {
  CHECK(round2(89.6075) == 89.61);
  CHECK(round2(0.125) == 0.13);
  CHECK(round2(1.0 / 3) == 0.33);
}

TEST_CASE("tally") {
  const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
  const EvalReport perfect = tally(labels, labels);
  CHECK(perfect.macro_avg == 100.0);
  for (double v : perfect.per_class_acc) CHECK(v == 100.0);
  const EvalReport zeros = tally(labels, std::vector<int>(8, 0));
  CHECK(zeros.per_class_acc == std::array<double, 4>{100, 0, 0, 0});
  CHECK(zeros.macro_avg == 25.0);
  CHECK(zeros.confusion[2][0] == 2);
  const EvalReport partial = tally({0, 0, 0, 2}, {0, 1, 0, 2});
  CHECK(std::isnan(partial.per_class_acc[1]));
  CHECK(partial.per_class_acc[0] == doctest::Approx(200.0 / 3));
  CHECK(partial.macro_avg == 83.33);
  CHECK(partial.micro_avg == 75.0);
  CHECK_THROWS_AS(tally({0, 1}, {0}), DataError);
}

TEST_CASE("report json round trip") {
  const EvalReport r = tally({0, 0, 1, 3}, {0, 1, 1, 3});
  const EvalReport back = eval_report_from_json(to_json(r));
  CHECK(back.confusion == r.confusion);
  CHECK(back.macro_avg == r.macro_avg);
  CHECK(std::isnan(back.per_class_acc[2]));
  auto j = to_json(r);
  j["n"] = 99;
  CHECK_THROWS_AS(eval_report_from_json(j), DataError);
}

TEST_CASE("distances against the pairwise loop") {
  Rng rng(31);
  for (int draw = 0; draw < 10; ++draw) {
    Matrix x(8, 3);
    test::fill_normal(x, rng);
    std::vector<int> labels{0, 1, 0, 1, 1, 0, 0, 1};
    for (bool all_pairs : {false, true}) {
      const auto [intra, inter] =
          intra_inter_distance(x, labels, all_pairs ? DistanceMode::kAllPairs : DistanceMode::kCentroid);
      const auto [oi, oe] = distance_oracle(x, labels, all_pairs);
      CHECK(std::abs(intra - oi) <= 1e-9);
      CHECK(std::abs(inter - oe) <= 1e-9);
    }
  }
}

TEST_CASE("distance trivial cases") {
  Matrix x(4, 2);
  x << 0, 0, 0, 0, 3, 4, 3, 4;
  const auto [intra, inter] = intra_inter_distance(x, {0, 0, 1, 1});
  CHECK(intra == 0.0);
  CHECK(inter == doctest::Approx(5.0));
  const auto [i2, e2] = intra_inter_distance(Matrix::Ones(4, 3), {0, 1, 0, 1});
  CHECK(i2 == 0.0);
  CHECK(e2 == 0.0);
  CHECK_THROWS_AS(intra_inter_distance(Matrix::Ones(3, 2), {0, 1, 2}), DataError);
}

TEST_CASE("embed_2d against a Jacobi eigensolver") {
  Matrix x(5, 3);
  x << 2, 0, 1, -1, 3, 0, 4, 1, -2, 0, -2, 1, 1, 1, 3;
  const Matrix centered = x.rowwise() - x.colwise().mean();
  const Matrix cov = centered.transpose() * centered;
  Vector values;
  Matrix vectors;
  jacobi(cov, values, vectors);
  std::vector<Index> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return values(a) > values(b); });
  const Matrix got = embed_2d(x);
  for (Index c = 0; c < 2; ++c) {
    Vector v = vectors.col(order[static_cast<std::size_t>(c)]);
    Index big = 0;
    v.cwiseAbs().maxCoeff(&big);
    if (v(big) < 0) v = -v;
    const Vector expect = centered * v;
    CHECK((got.col(c) - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("embed_2d preserves planar distances") {
  Rng rng(8);
  Matrix plane(12, 2);
  test::fill_normal(plane, rng);
  Matrix basis(2, 10);
  test::fill_normal(basis, rng);
  const Eigen::HouseholderQR<Matrix> qr(basis.transpose());
  const Matrix q = qr.householderQ() * Matrix::Identity(10, 2);
  const Matrix x = plane * q.transpose();
  const Matrix y = embed_2d(x);
  for (Index i = 0; i < 12; ++i)
    for (Index j = 0; j < 12; ++j) CHECK(std::abs(dist(x, i, j) - dist(y, i, j)) < 1e-6);

  Matrix dup(6, 3);
  test::fill_normal(dup, rng);
  dup.bottomRows(3) = dup.topRows(3);
  const Matrix e = embed_2d(dup);
  CHECK((e.topRows(3) - e.bottomRows(3)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(embed_2d(Matrix::Ones(5, 3)), DataError);
}

TEST_CASE("report rendering") {
  const EvalReport perfect = tally({0, 1, 2, 3}, {0, 1, 2, 3});
  const std::string md = render_report({{"oracle", perfect}}, ReportFormat::kMarkdown);
  CHECK(md.find("100.00 | 100.00 | 100.00 | 100.00 | **100.00**") != std::string::npos);
  const EvalReport weak = tally({0, 1, 2, 3}, {0, 0, 2, 3});
  const std::string two = render_report({{"weak", weak}, {"strong", perfect}}, ReportFormat::kMarkdown);
  CHECK(two.find("| **strong** |") != std::string::npos);
  CHECK(two.find("| weak |") != std::string::npos);
  const auto rows = parse_report_csv(render_report({{"weak", weak}, {"strong", perfect}}, ReportFormat::kCsv));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].avg == 75.0);
  CHECK(rows[1].per_class[3] == 100.0);
  CHECK(parse_report_format("csv") == ReportFormat::kCsv);
  CHECK_THROWS_AS(parse_report_format("xml"), DataError);
}

TEST_CASE("AVG column for a reference results table") {
  struct Row {
    std::array<double, 4> acc;
    double printed;
  };
  const std::vector<Row> table{{{100, 100, 100, 0}, 65.17},   {{100, 100, 100, 100}, 100.0},
                               {{100, 100, 100, 100}, 100.0}, {{100, 100, 100, 29.21}, 82.30},
                               {{100, 100, 100, 58.43}, 89.61}, {{100, 100, 100, 100}, 100.0}};
  int matches = 0;
  for (const auto& r : table) matches += macro_avg(r.acc) == r.printed;
  // The first printed cell is not the mean of its row; every other row matches.
  CHECK(matches == 5);
  CHECK(macro_avg(table[0].acc) == 75.0);
}

TEST_CASE("stats csv") {
  DatasetStats s;
  s.intra_dist = 0.5;
  s.inter_dist = 1.25;
  s.per_class_counts = {1, 2, 3, 4};
  s.n_subjects = 7;
  CHECK(stats_csv(s) == "intra,inter,count0,count1,count2,count3,n_subjects\n0.500000,1.250000,1,2,3,4,7\n");
}
