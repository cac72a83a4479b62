#include <doctest.h>

#include <cmath>
#include <set>

#include "raffnet/anchors.hpp"
#include "raffnet/data.hpp"
#include "raffnet/image.hpp"
#include "support.hpp"

using namespace raffnet;

namespace {

Image gray(Index h, Index w, double v) { return Image(h, w, v); }

// Independent scalar bilinear sampler, half-pixel centers, edge clamp.
double bilinear_oracle(const Image& img, int c, const AnchorBox& box, Index oh, Index ow, Index i, Index j) {
  const double H = img.height(), W = img.width();
  double x = (box.cx - box.w / 2) * W + (j + 0.5) * box.w * W / ow - 0.5;
  double y = (box.cy - box.h / 2) * H + (i + 0.5) * box.h * H / oh - 0.5;
  x = std::min(std::max(x, 0.0), W - 1);
  y = std::min(std::max(y, 0.0), H - 1);
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, static_cast<int>(W) - 1), y1 = std::min(y0 + 1, static_cast<int>(H) - 1);
  const double ax = x - x0, ay = y - y0;
  return (1 - ay) * ((1 - ax) * img(c, y0, x0) + ax * img(c, y0, x1)) +
         ay * ((1 - ax) * img(c, y1, x0) + ax * img(c, y1, x1));
}

}  // namespace

TEST_CASE("blur score of a single white pixel matches direct convolution") {
  Image img = gray(8, 8, 0.0);
  for (int c = 0; c < 3; ++c) img(c, 3, 4) = 1.0;
  double lum[8][8] = {};
  lum[3][4] = 0.299 + 0.587 + 0.114;
  std::vector<double> resp;
  for (int i = 1; i < 7; ++i)
    for (int j = 1; j < 7; ++j)
      resp.push_back(lum[i - 1][j] + lum[i + 1][j] + lum[i][j - 1] + lum[i][j + 1] - 4 * lum[i][j]);
  double mean = 0.0, var = 0.0;
  for (double r : resp) mean += r;
  mean /= resp.size();
  for (double r : resp) var += (r - mean) * (r - mean);
  var /= resp.size();
  CHECK(blur_score(img) == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("blur score ordering") {
  CHECK(blur_score(gray(6, 6, 0.4)) == 0.0);
  Image checker = gray(16, 16, 0.0);
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) checker(c, y, x) = ((x + y) % 2) ? 1.0 : 0.0;
  Image blurred = checker;
  for (int c = 0; c < 3; ++c)
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) {
        double s = 0.0;
        for (Index k = 0; k < 4; ++k) s += checker(c, y, (x + k) % 16);
        blurred(c, y, x) = s / 4;
      }
  CHECK(blur_score(checker) > blur_score(blurred));
  CHECK_THROWS_AS(blur_score(gray(2, 5, 0.0)), DataError);
}

TEST_CASE("filter_by_score keeps scores at or above the threshold") {
  const std::vector<double> scores{0.5, 0.1, 0.9, 0.3, 0.7, 0.3};
  CHECK(filter_by_score(scores, 0.0).size() == scores.size());
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const auto kept = filter_by_score(scores, median);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool in = std::find(kept.begin(), kept.end(), i) != kept.end();
    CHECK(in == (scores[i] >= median));
  }
}

TEST_CASE("crop_resize against the scalar oracle on 4x4 inputs") {
  Rng rng(5);
  Image ramp(4, 4);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) ramp(c, y, x) = 4.0 * y + x + c;
  const Image out = crop_resize(ramp, AnchorBox{}, 2, 2);
  CHECK(out(0, 0, 0) == doctest::Approx(2.5));
  CHECK(out(0, 1, 1) == doctest::Approx(12.5));

  for (int draw = 0; draw < 50; ++draw) {
    Image img(4, 4);
    for (int c = 0; c < 3; ++c)
      for (Index i = 0; i < 16; ++i) img.channels[c].data()[i] = rng.uniform();
    const double w = rng.uniform(0.2, 1.0), h = rng.uniform(0.2, 1.0);
    const AnchorBox box{rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h};
    const Index oh = 1 + static_cast<Index>(rng.below(5)), ow = 1 + static_cast<Index>(rng.below(5));
    const Image got = crop_resize(img, box, oh, ow);
    for (int c = 0; c < 3; ++c)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) CHECK(std::abs(got(c, i, j) - bilinear_oracle(img, c, box, oh, ow, i, j)) <= 1e-6);
  }
}

TEST_CASE("crop_resize trivial cases") {
  const Image flat = gray(7, 5, 0.3);
  const Image out = crop_resize(flat, AnchorBox{0.3, 0.6, 0.4, 0.5}, 3, 9);
  for (int c = 0; c < 3; ++c) CHECK((out.channels[c].array() - 0.3).abs().maxCoeff() < 1e-15);
  Rng rng(2);
  Image img(6, 6);
  for (int c = 0; c < 3; ++c)
    for (Index i = 0; i < 36; ++i) img.channels[c].data()[i] = rng.uniform();
  CHECK(crop_resize(img, AnchorBox{}, 6, 6) == img);
  CHECK_THROWS_AS(crop_resize(img, AnchorBox{}, 0, 3), DataError);
}

TEST_CASE("area resize averages whole blocks") {
  Image img(4, 4);
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) img(c, y, x) = 4.0 * y + x;
  const Image out = resize_area(img, 2, 2);
  CHECK(out(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(out(2, 1, 1) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));
  const Matrix w = area_weights(5, 3);
  for (Index r = 0; r < 3; ++r) CHECK(w.row(r).sum() == doctest::Approx(1.0));
}

TEST_CASE("ppm round trip") {
  test::TempDir dir("ppm");
  Image img(3, 5);
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) img(c, y, x) = ((y * 5 + x) * 3 + c) / 255.0;
  write_ppm(img, dir / "a.ppm");
  const Image back = read_image(dir / "a.ppm");
  REQUIRE(back.height() == 3);
  REQUIRE(back.width() == 5);
  for (int c = 0; c < 3; ++c) CHECK((back.channels[c] - img.channels[c]).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(read_image(dir / "missing.ppm"), DataError);
}

TEST_CASE("default anchors") {
  const auto boxes = generate_anchors(default_anchor_config());
  CHECK(boxes.size() == 180);
  std::set<std::string> ratios;
  for (const auto& e : default_anchor_config().entries) ratios.insert(e.ratio.str());
  CHECK(ratios == std::set<std::string>{"1:1", "2:1", "1:2", "3:1", "1:3"});
  for (const auto& b : boxes) CHECK(b.inside_unit_square());
  CHECK(generate_anchors(default_anchor_config()) == boxes);
}

TEST_CASE("anchor presets") {
  for (int n : anchor_preset_counts()) {
    const auto boxes = generate_anchors(anchor_preset(n));
    CHECK(static_cast<int>(boxes.size()) == n);
    for (const auto& b : boxes) CHECK(b.inside_unit_square());
  }
  CHECK_THROWS_AS(anchor_preset(23), DataError);
}

TEST_CASE("uniform grid geometry") {
  AnchorConfig cfg;
  cfg.entries.push_back(AnchorEntry{8, 8, AspectRatio{1, 1}, 1.0});
  const auto boxes = generate_anchors(cfg);
  REQUIRE(boxes.size() == 64);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const auto& b = boxes[static_cast<std::size_t>(i * 8 + j)];
      CHECK(b.w == doctest::Approx(1.0 / 8));
      CHECK(b.h == doctest::Approx(1.0 / 8));
      CHECK(b.cx == doctest::Approx((2 * j + 1) / 16.0));
      CHECK(b.cy == doctest::Approx((2 * i + 1) / 16.0));
    }
  cfg.entries = {AnchorEntry{1, 1, AspectRatio{1, 1}, 1.0}};
  CHECK(generate_anchors(cfg) == std::vector<AnchorBox>{AnchorBox{}});
}

TEST_CASE("elongated anchors keep their aspect ratio") {
  AnchorConfig cfg;
  cfg.entries.push_back(AnchorEntry{5, 5, AspectRatio{3, 1}, 1.0});
  for (const auto& b : generate_anchors(cfg)) {
    CHECK(b.w / b.h == doctest::Approx(3.0));
    CHECK(b.inside_unit_square());
  }
}

TEST_CASE("anchor config validation and json") {
  CHECK(parse_ratio("2:1") == AspectRatio{2, 1});
  CHECK_THROWS_AS(parse_ratio("2x1"), DataError);
  CHECK_THROWS_AS(parse_ratio("0:1"), DataError);
  AnchorConfig bad;
  bad.entries.push_back(AnchorEntry{0, 2, AspectRatio{1, 1}, 1.0});
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad.entries[0] = AnchorEntry{2, 2, AspectRatio{1, 1}, 1.5};
  CHECK_THROWS_AS(bad.validate(), DataError);
  const AnchorConfig round = anchor_config_from_json(to_json(default_anchor_config()));
  CHECK(generate_anchors(round) == generate_anchors(default_anchor_config()));
}
