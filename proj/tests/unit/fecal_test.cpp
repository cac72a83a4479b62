#include <doctest.h>

#include "raffnet/fecal.hpp"
#include "raffnet/synthetic.hpp"
#include "raffnet/toy_vit.hpp"
#include "support.hpp"

using namespace raffnet;

namespace {

Matrix unit_rows(Index n, Index d, Rng& rng) {
  Matrix m(n, d);
  test::fill_normal(m, rng);
  m.rowwise().normalize();
  return m;
}

Matrix two_by_two() {
  Matrix s(2, 2);
  s << 0.2, 0.5, 0.1, -0.3;
  return s;
}

}  // namespace

TEST_CASE("similarity against a dot-product loop") {
  Rng rng(17);
  for (int draw = 0; draw < 20; ++draw) {
    const Matrix a = unit_rows(3, 4, rng), b = unit_rows(2, 4, rng);
    const Matrix s = similarity_scores<double>(a, b);
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 2; ++j) {
        double dot = 0.0;
        for (Index k = 0; k < 4; ++k) dot += a(i, k) * b(j, k);
        CHECK(std::abs(s(i, j) - dot) <= 1e-6);
      }
  }
}

TEST_CASE("similarity trivial cases") {
  Matrix e = Matrix::Identity(2, 2);
  const Matrix s = similarity_scores<double>(e, e);
  CHECK(s(0, 0) == 1.0);
  CHECK(s(0, 1) == 0.0);
  CHECK_THROWS_AS(similarity_scores<double>(Matrix::Identity(2, 3), Matrix::Identity(2, 2)), DimensionError);
}

TEST_CASE("aggregation modes") {
  const Matrix s = two_by_two();
  const Vector mx = aggregate<double>(s, Aggregation{AggregationMode::kMax, 1});
  CHECK(mx(0) == 0.5);
  CHECK(mx(1) == 0.1);
  const Vector mean = aggregate<double>(s, Aggregation{AggregationMode::kMean, 1});
  CHECK(mean(0) == doctest::Approx(0.35));
  CHECK(mean(1) == doctest::Approx(-0.1));
  const Vector top = aggregate<double>(s, Aggregation{AggregationMode::kTopKMean, 2});
  CHECK(top.isApprox(mean));
  const Matrix col = s.col(0);
  for (auto mode : {AggregationMode::kMax, AggregationMode::kMean, AggregationMode::kTopKMean})
    CHECK(aggregate<double>(col, Aggregation{mode, 1}) == Vector(col));
  CHECK_THROWS_AS(aggregate<double>(Matrix(0, 2), Aggregation{}), DataError);
  CHECK(to_string(parse_aggregation("topk_mean(3)")) == "topk_mean(3)");
  CHECK(parse_aggregation("max").mode == AggregationMode::kMax);
  CHECK_THROWS_AS(parse_aggregation("median"), DataError);
}

TEST_CASE("aggregate_backward matches finite differences") {
  Rng rng(2);
  Matrix s(4, 3);
  test::fill_normal(s, rng);
  const Vector w = test::random_vector(4, rng);
  for (const Aggregation agg : {Aggregation{AggregationMode::kMax, 1}, Aggregation{AggregationMode::kMean, 1},
                                Aggregation{AggregationMode::kTopKMean, 2}}) {
    const Matrix g = aggregate_backward<double>(s, agg, w);
    for (Index i = 0; i < s.size(); ++i) {
      Matrix up = s, down = s;
      up.data()[i] += 1e-6;
      down.data()[i] -= 1e-6;
      const double fd = (w.dot(aggregate<double>(up, agg)) - w.dot(aggregate<double>(down, agg))) / 2e-6;
      CHECK(std::abs(fd - g.data()[i]) < 1e-6);
    }
  }
}

TEST_CASE("anchor embeddings") {
  const Backend b = make_backend("toy-vit-d16", 5);
  Rng rng(6);
  const Adapter<double> adapter = make_adapter<double>(16, rng);
  Image img(64, 64);
  for (int c = 0; c < 3; ++c)
    for (Index i = 0; i < img.channels[c].size(); ++i) img.channels[c].data()[i] = rng.uniform();
  const auto anchors = generate_anchors(default_anchor_config());
  const Matrix e = embed_anchors(img, anchors, *b.image, adapter);
  CHECK(e.rows() == 180);
  CHECK(e.cols() == 16);
  for (Index a = 0; a < e.rows(); ++a) CHECK(e.row(a).norm() == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<AnchorBox> dup{anchors[3], anchors[3]};
  const Matrix d = embed_anchors(img, dup, *b.image, adapter);
  CHECK(d.row(0) == d.row(1));

  const Matrix flat = embed_anchors(Image(64, 64, 0.4), anchors, *b.image, adapter);
  for (Index a = 1; a < flat.rows(); ++a) CHECK((flat.row(a) - flat.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("calibration separates stool-like patches") {
  const Backend b = make_backend("toy-vit-d16", 3);
  Rng rng(4);
  Adapter<double> adapter = make_adapter<double>(16, rng);
  const PromptBank bank = make_prompt_bank(*b.text, default_prompts());
  const PatchSet patches = calibration_patches(40, 16, 11);
  auto features = [&](const std::vector<Image>& imgs) {
    Matrix f(static_cast<Index>(imgs.size()), 16);
    for (std::size_t i = 0; i < imgs.size(); ++i) f.row(static_cast<Index>(i)) = b.image->encode(imgs[i]).transpose();
    return f;
  };
  CalibrationOptions opts;
  opts.steps = 200;
  const CalibrationResult r =
      calibrate_adapter(adapter, features(patches.positives), features(patches.negatives), bank, Aggregation{}, opts);
  CHECK(r.final_loss < r.initial_loss);
  CHECK(r.positive_mean > r.negative_mean);
}
