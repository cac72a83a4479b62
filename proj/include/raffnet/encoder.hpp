#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

#include "raffnet/image.hpp"
#include "raffnet/nn.hpp"

namespace raffnet {

// Residual bottleneck: z + up(relu(down(z))), hidden width floor(D/4).
template <typename Scalar>
struct Adapter {
  Linear<Scalar> down, up;

  Adapter() = default;
  explicit Adapter(Index dim) : down(dim, dim / 4), up(dim / 4, dim) {
    if (dim / 4 < 1) throw DimensionError("adapter needs embedding dim >= 4");
  }

  Index dim() const { return down.in_dim(); }
  Index hidden() const { return down.out_dim(); }
  bool operator==(const Adapter&) const = default;
};

// Down-projection ~ N(0, 1/D); up-projection zero so the adapter starts as identity.
template <typename Scalar>
Adapter<Scalar> make_adapter(Index dim, Rng& rng) {
  Adapter<Scalar> a(dim);
  a.down.init_normal(rng, 1.0 / std::sqrt(static_cast<double>(dim)));
  return a;
}

template <typename Scalar, typename Derived>
VectorT<Scalar> adapter_forward(const Adapter<Scalar>& params, const Eigen::MatrixBase<Derived>& z) {
  require_dim(z.size(), params.dim(), "adapter input");
  return z + params.up(relu(params.down(z)));
}

template <typename Scalar, typename DZ, typename DG>
VectorT<Scalar> adapter_backward(const Adapter<Scalar>& params, const Eigen::MatrixBase<DZ>& z,
                                 const Eigen::MatrixBase<DG>& grad_out, Adapter<Scalar>& grad) {
  const VectorT<Scalar> pre = params.down(z);
  const VectorT<Scalar> hidden = relu(pre);
  VectorT<Scalar> d_hidden = params.up.backward(hidden, grad_out, grad.up);
  d_hidden = (pre.array() > Scalar(0)).select(d_hidden, Scalar(0));
  return grad_out + params.down.backward(z, d_hidden, grad.down);
}

using ParamVisitor = std::function<void(const std::string&, Eigen::Ref<Matrix>)>;
using ConstParamVisitor = std::function<void(const std::string&, Eigen::Ref<const Matrix>)>;

template <typename Scalar, typename Visitor>
void visit_linear(Linear<Scalar>& l, const std::string& prefix, Visitor&& v) {
  v(prefix + ".weight", l.weight);
  v(prefix + ".bias", l.bias);
}
template <typename Scalar, typename Visitor>
void visit_linear(const Linear<Scalar>& l, const std::string& prefix, Visitor&& v) {
  v(prefix + ".weight", l.weight);
  v(prefix + ".bias", l.bias);
}

struct InputSize {
  Index height = 0, width = 0;
};

// Opaque forward state for backends that support backpropagation.
class EncoderTape {
 public:
  virtual ~EncoderTape() = default;
};

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;

  virtual std::string name() const = 0;
  virtual Index embed_dim() const = 0;
  virtual InputSize native_input() const = 0;

  // Input must already be at native_input().
  virtual Vector encode(const Image& native) const = 0;

  virtual bool differentiable() const { return false; }
  virtual Vector encode(const Image& native, std::unique_ptr<EncoderTape>& tape) const;
  // Accumulates parameter gradients into grad, an encoder of the same concrete type.
  virtual void backward(const EncoderTape& tape, const Vector& grad_out, ImageEncoder& grad) const;

  virtual void visit_parameters(const ParamVisitor& v) = 0;
  virtual void visit_parameters(const ConstParamVisitor& v) const = 0;
  virtual std::unique_ptr<ImageEncoder> clone() const = 0;

  std::unique_ptr<ImageEncoder> zeros_like() const;
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const TextEncoder& other);
  TextEncoder& operator=(const TextEncoder&) = delete;
  virtual ~TextEncoder() = default;

  virtual std::string name() const = 0;
  virtual Index embed_dim() const = 0;

  // Cached per prompt; the cache is dropped whenever parameters are visited mutably.
  Vector encode(const std::string& prompt) const;

  virtual void visit_parameters(const ParamVisitor& v) = 0;
  virtual void visit_parameters(const ConstParamVisitor& v) const = 0;
  virtual std::unique_ptr<TextEncoder> clone() const = 0;

  std::size_t cache_size() const;
  void clear_cache();

 protected:
  virtual Vector encode_uncached(const std::string& prompt) const = 0;

 private:
  mutable std::shared_mutex mutex_;
  mutable std::map<std::string, Vector> cache_;
};

struct Backend {
  std::unique_ptr<ImageEncoder> image;
  std::unique_ptr<TextEncoder> text;
};

// Factories are tried in registration order after the built-in toy backend.
using BackendFactory = std::function<std::optional<Backend>(const std::string& name, std::uint64_t seed)>;
void register_backend(BackendFactory factory);
// Builds a backend by name. When RAFFNET_CACHE names a directory holding
// <name>/image.bin or <name>/text.bin, those tensors replace the seeded weights.
Backend make_backend(const std::string& name, std::uint64_t seed);
std::optional<std::filesystem::path> backend_cache_dir();

// Resample to a backend's input: box filter when shrinking both axes,
// bilinear otherwise.
Image to_native(const Image& image, InputSize size);

// Checks the raster matches the backend's native input before encoding.
Vector encode_image(const ImageEncoder& backend, const Image& image);
Vector encode_text(const TextEncoder& backend, const std::string& prompt);

}  // namespace raffnet
