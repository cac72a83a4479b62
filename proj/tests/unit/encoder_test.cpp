#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "raffnet/encoder.hpp"
#include "raffnet/fecal.hpp"
#include "raffnet/tensor_io.hpp"
#include "raffnet/toy_vit.hpp"
#include "support.hpp"

using namespace raffnet;

namespace {

Image random_image(Index h, Index w, Rng& rng) {
  Image img(h, w);
  for (int c = 0; c < 3; ++c)
    for (Index i = 0; i < h * w; ++i) img.channels[c].data()[i] = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("adapter starts as the identity") {
  Rng rng(1);
  const Adapter<double> a = make_adapter<double>(16, rng);
  CHECK(a.hidden() == 4);
  const Vector z = test::random_vector(16, rng);
  CHECK(adapter_forward(a, z) == z);
  CHECK(Adapter<double>(768).hidden() == 192);
  CHECK_THROWS_AS(Adapter<double>(3), DimensionError);
}

TEST_CASE("adapter hand-computed forward at D=4") {
  Adapter<double> a(4);
  a.down.weight << 1, -1, 1, 2;
  a.down.bias << 0.5;
  a.up.weight << 1, 0, -1, 0.5;
  a.up.bias << 0.1, 0.2, 0.3, 0.4;
  Vector z(4);
  z << 2, 1, 2, 0.5;
  // down: 2 - 1 + 2 + 1 + 0.5 = 4.5
  const Vector out = adapter_forward(a, z);
  CHECK(out(0) == doctest::Approx(2 + 4.5 + 0.1));
  CHECK(out(1) == doctest::Approx(1 + 0.2));
  CHECK(out(2) == doctest::Approx(2 - 4.5 + 0.3));
  CHECK(out(3) == doctest::Approx(0.5 + 2.25 + 0.4));
  z << -2, 1, 0, 0;  // rectified away
  CHECK(adapter_forward(a, z).isApprox(z + a.up.bias));
}

TEST_CASE("adapter gradients match finite differences") {
  Rng rng(21);
  for (int draw = 0; draw < 5; ++draw) {
    Adapter<double> a(8);
    test::randomize(a.down, rng, 0.7);
    test::randomize(a.up, rng, 0.7);
    const Vector z = test::random_vector(8, rng);
    const Vector w = test::random_vector(8, rng);
    Adapter<double> g(8);
    const Vector dz = adapter_backward(a, z, w, g);
    std::vector<test::Tensor> params;
    std::vector<const double*> grads;
    test::push_linear(params, grads, "down", a.down, g.down);
    test::push_linear(params, grads, "up", a.up, g.up);
    const auto check = test::finite_difference(params, grads, [&] { return w.dot(adapter_forward(a, z)); });
    CHECK(check.worst() < 1e-4);
    for (Index i = 0; i < 8; ++i) {
      Vector up = z, down = z;
      up(i) += 1e-6;
      down(i) -= 1e-6;
      CHECK(std::abs((w.dot(adapter_forward(a, up)) - w.dot(adapter_forward(a, down))) / 2e-6 - dz(i)) < 1e-6);
    }
  }
}

TEST_CASE("toy backend names") {
  const auto cfg = parse_toy_vit_name("toy-vit-d32-i32-p8");
  REQUIRE(cfg);
  CHECK(cfg->embed_dim == 32);
  CHECK(cfg->input_size == 32);
  CHECK(cfg->patch_size == 8);
  CHECK(toy_vit_name(*cfg) == "toy-vit-d32-i32-p8");
  CHECK(parse_toy_vit_name("toy-vit-d16")->patch_size == 4);
  CHECK_FALSE(parse_toy_vit_name("vit-b16"));
  CHECK_THROWS_AS(make_backend("no-such-backend", 0), DataError);
}

TEST_CASE("toy backend is deterministic") {
  const Backend a = make_backend("toy-vit-d16", 7);
  const Backend b = make_backend("toy-vit-d16", 7);
  Rng rng(4);
  const Image img = random_image(16, 16, rng);
  const Vector va = a.image->encode(img);
  CHECK(va.size() == 16);
  CHECK(va.allFinite());
  CHECK(va == a.image->encode(img));
  CHECK(va == b.image->encode(img));
  CHECK_THROWS_AS(encode_image(*a.image, random_image(8, 8, rng)), DimensionError);
}

TEST_CASE("zero head gives a zero embedding") {
  ToyVitEncoder enc(ToyVitConfig{}, 3);
  enc.head().weight.setZero();
  enc.head().bias.setZero();
  CHECK(enc.encode(Image(16, 16, 0.0)) == Vector::Zero(16));
}

TEST_CASE("toy text encoder") {
  const Backend b = make_backend("toy-vit-d16", 1);
  const Vector y = b.text->encode("yellow stool");
  const Vector r = b.text->encode("residual feces");
  CHECK(y.size() == 16);
  CHECK(r.size() == 16);
  CHECK(y == b.text->encode("yellow stool"));
  CHECK(y != r);
  CHECK(b.text->cache_size() == 2);
  const PromptBank bank = make_prompt_bank(*b.text, default_prompts());
  CHECK(bank.size() == 2);
  for (Index p = 0; p < 2; ++p) CHECK(bank.embeddings.row(p).norm() == doctest::Approx(1.0));
}

TEST_CASE("toy backbone gradients match finite differences") {
  ToyVitConfig cfg;
  cfg.embed_dim = 8;
  cfg.input_size = 8;
  cfg.patch_size = 4;
  ToyVitEncoder enc(cfg, 9);
  Rng rng(13);
  const Image img = random_image(8, 8, rng);
  const Vector w = test::random_vector(8, rng);
  std::unique_ptr<EncoderTape> tape;
  enc.encode(img, tape);
  auto grad = enc.zeros_like();
  enc.backward(*tape, w, *grad);

  std::vector<test::Tensor> params;
  std::vector<const double*> grads;
  enc.visit_parameters(ParamVisitor([&](const std::string& n, Eigen::Ref<Matrix> p) {
    params.push_back({n, {p.data(), p.size()}});
  }));
  static_cast<const ImageEncoder&>(*grad).visit_parameters(
      ConstParamVisitor([&](const std::string&, Eigen::Ref<const Matrix> p) { grads.push_back(p.data()); }));
  REQUIRE(params.size() == grads.size());
  const auto check = test::finite_difference(params, grads, [&] { return w.dot(enc.encode(img)); });
  for (const auto& [name, err] : check.rel_error) {
    CAPTURE(name);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("to_native resamples to the backend input") {
  Rng rng(8);
  const Image big = random_image(64, 64, rng);
  const Image small = to_native(big, InputSize{16, 16});
  CHECK(small.height() == 16);
  CHECK(small.width() == 16);
  CHECK(small(1, 0, 0) == doctest::Approx(big.channels[1].block(0, 0, 4, 4).mean()));
  const Image up = to_native(random_image(4, 4, rng), InputSize{16, 16});
  CHECK(up.height() == 16);
  CHECK(to_native(small, InputSize{16, 16}) == small);
}

TEST_CASE("cached weights replace seeded ones") {
  test::TempDir dir("cache");
  const Backend seeded = make_backend("toy-vit-d8-i8-p4", 3);
  TensorMap tensors;
  seeded.image->visit_parameters(
      ConstParamVisitor([&](const std::string& n, Eigen::Ref<const Matrix> p) { tensors[n] = Matrix(p) * 0.5; }));
  std::filesystem::create_directories(dir / "toy-vit-d8-i8-p4");
  write_tensors(tensors, dir / "toy-vit-d8-i8-p4" / "image.bin");

  ::setenv("RAFFNET_CACHE", dir.path().c_str(), 1);
  const Backend cached = make_backend("toy-vit-d8-i8-p4", 99);
  TensorMap loaded;
  cached.image->visit_parameters(
      ConstParamVisitor([&](const std::string& n, Eigen::Ref<const Matrix> p) { loaded[n] = p; }));
  CHECK(loaded == tensors);

  tensors.begin()->second = Matrix::Zero(1, 1);
  write_tensors(tensors, dir / "toy-vit-d8-i8-p4" / "image.bin");
  CHECK_THROWS_AS(make_backend("toy-vit-d8-i8-p4", 0), DimensionError);
  tensors.erase(tensors.begin());
  write_tensors(tensors, dir / "toy-vit-d8-i8-p4" / "image.bin");
  CHECK_THROWS_AS(make_backend("toy-vit-d8-i8-p4", 0), DataError);
  ::unsetenv("RAFFNET_CACHE");
}

TEST_CASE("tensor file round trip and corruption") {
  test::TempDir dir("tensors");
  TensorMap t{{"a", Matrix::Random(3, 2)}, {"b", Matrix::Random(1, 5)}};
  write_tensors(t, dir / "t.bin");
  CHECK(read_tensors(dir / "t.bin") == t);
  {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out << "NOTATENSORFILE";
  }
  CHECK_THROWS_AS(read_tensors(dir / "bad.bin"), DataError);
}
