#include "raffnet/encoder.hpp"

#include <cstdlib>
#include <mutex>
#include <vector>

#include "raffnet/anchors.hpp"
#include "raffnet/tensor_io.hpp"
#include "raffnet/toy_vit.hpp"

namespace raffnet {

Vector ImageEncoder::encode(const Image&, std::unique_ptr<EncoderTape>&) const {
  throw DataError("backend '" + name() + "' does not support backpropagation");
}

void ImageEncoder::backward(const EncoderTape&, const Vector&, ImageEncoder&) const {
  throw DataError("backend '" + name() + "' does not support backpropagation");
}

std::unique_ptr<ImageEncoder> ImageEncoder::zeros_like() const {
  auto out = clone();
  out->visit_parameters(ParamVisitor([](const std::string&, Eigen::Ref<Matrix> p) { p.setZero(); }));
  return out;
}

TextEncoder::TextEncoder(const TextEncoder& other) {
  std::shared_lock lock(other.mutex_);
  cache_ = other.cache_;
}

Vector TextEncoder::encode(const std::string& prompt) const {
  {
    std::shared_lock lock(mutex_);
    if (auto it = cache_.find(prompt); it != cache_.end()) return it->second;
  }
  Vector v = encode_uncached(prompt);
  std::unique_lock lock(mutex_);
  return cache_.emplace(prompt, std::move(v)).first->second;
}

std::size_t TextEncoder::cache_size() const {
  std::shared_lock lock(mutex_);
  return cache_.size();
}

void TextEncoder::clear_cache() {
  std::unique_lock lock(mutex_);
  cache_.clear();
}

namespace {

std::vector<BackendFactory>& registry() {
  static std::vector<BackendFactory> factories;
  return factories;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

void register_backend(BackendFactory factory) {
  std::lock_guard lock(registry_mutex());
  registry().push_back(std::move(factory));
}

std::optional<std::filesystem::path> backend_cache_dir() {
  const char* env = std::getenv("RAFFNET_CACHE");
  if (!env || !*env) return std::nullopt;
  return std::filesystem::path(env);
}

namespace {

template <typename Encoder>
void load_weights(Encoder& enc, const std::filesystem::path& file) {
  const TensorMap tensors = read_tensors(file);
  enc.visit_parameters(ParamVisitor([&](const std::string& n, Eigen::Ref<Matrix> p) {
    auto it = tensors.find(n);
    if (it == tensors.end()) throw DataError(file.string() + " lacks tensor '" + n + "'");
    if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
      throw DimensionError(file.string() + ": tensor '" + n + "' has the wrong shape");
    p = it->second;
  }));
}

Backend build_backend(const std::string& name, std::uint64_t seed) {
  if (auto cfg = parse_toy_vit_name(name)) {
    Backend b;
    b.image = std::make_unique<ToyVitEncoder>(*cfg, mix_seed(seed, fnv1a("image")));
    b.text = std::make_unique<ToyTextEncoder>(cfg->embed_dim, 4096, mix_seed(seed, fnv1a("text")));
    return b;
  }
  std::lock_guard lock(registry_mutex());
  for (const auto& f : registry())
    if (auto b = f(name, seed)) return std::move(*b);
  throw DataError("unknown backend '" + name + "'");
}

}  // namespace

Backend make_backend(const std::string& name, std::uint64_t seed) {
  Backend b = build_backend(name, seed);
  if (const auto dir = backend_cache_dir()) {
    const auto root = *dir / name;
    if (b.image && std::filesystem::exists(root / "image.bin")) load_weights(*b.image, root / "image.bin");
    if (b.text && std::filesystem::exists(root / "text.bin")) load_weights(*b.text, root / "text.bin");
  }
  return b;
}

Image to_native(const Image& image, InputSize size) {
  if (image.height() == size.height && image.width() == size.width) return image;
  if (image.height() > size.height && image.width() > size.width) return resize_area(image, size.height, size.width);
  return crop_resize(image, AnchorBox{}, size.height, size.width);
}

Vector encode_image(const ImageEncoder& backend, const Image& image) {
  const auto in = backend.native_input();
  if (image.height() != in.height || image.width() != in.width)
    throw DimensionError("encode_image: expected " + std::to_string(in.height) + "x" +
                         std::to_string(in.width) + " input, got " + std::to_string(image.height()) +
                         "x" + std::to_string(image.width()));
  Vector z = backend.encode(image);
  require_dim(z.size(), backend.embed_dim(), "encoder output");
  return z;
}

Vector encode_text(const TextEncoder& backend, const std::string& prompt) {
  if (prompt.empty()) throw DataError("encode_text: empty prompt");
  return backend.encode(prompt);
}

}  // namespace raffnet
