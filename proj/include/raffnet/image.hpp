#pragma once

#include <algorithm>
#include <array>
#include <filesystem>

#include "raffnet/types.hpp"

namespace raffnet {

// Planar 3-channel raster, values nominally in [0, 1].
template <typename Scalar>
struct Raster {
  using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  std::array<Plane, 3> channels;

  Raster() = default;
  Raster(Index height, Index width, Scalar fill = Scalar(0)) {
    for (auto& c : channels) c = Plane::Constant(height, width, fill);
  }

  Index height() const { return channels[0].rows(); }
  Index width() const { return channels[0].cols(); }
  bool empty() const { return channels[0].size() == 0; }

  Scalar& operator()(int c, Index y, Index x) { return channels[c](y, x); }
  Scalar operator()(int c, Index y, Index x) const { return channels[c](y, x); }

  bool operator==(const Raster& other) const {
    if (height() != other.height() || width() != other.width()) return false;
    for (int c = 0; c < 3; ++c)
      if (channels[c] != other.channels[c]) return false;
    return true;
  }
};

using Image = Raster<double>;

template <typename Scalar>
typename Raster<Scalar>::Plane luma(const Raster<Scalar>& img) {
  return Scalar(0.299) * img.channels[0] + Scalar(0.587) * img.channels[1] +
         Scalar(0.114) * img.channels[2];
}

template <typename Scalar>
Raster<Scalar> scaled(const Raster<Scalar>& img, Scalar factor) {
  Raster<Scalar> out = img;
  for (auto& c : out.channels) c *= factor;
  return out;
}

// Row i holds the fractional overlap of output cell i with each input cell,
// normalized to sum to one.
inline Matrix area_weights(Index in, Index out) {
  Matrix w = Matrix::Zero(out, in);
  const double step = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    const double lo = o * step, hi = (o + 1) * step;
    for (Index i = static_cast<Index>(lo); i < in && i < hi; ++i)
      w(o, i) = (std::min<double>(hi, i + 1) - std::max<double>(lo, i)) / step;
  }
  return w;
}

// Box-filter resample; each output pixel averages the input area it covers.
template <typename Scalar>
Raster<Scalar> resize_area(const Raster<Scalar>& img, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1) throw DataError("resize_area: output size must be at least 1x1");
  const MatrixT<Scalar> wy = area_weights(img.height(), out_h).template cast<Scalar>();
  const MatrixT<Scalar> wx = area_weights(img.width(), out_w).template cast<Scalar>();
  Raster<Scalar> out;
  for (int c = 0; c < 3; ++c) out.channels[c] = wy * img.channels[c] * wx.transpose();
  return out;
}

// Decodes PPM (P3/P6) natively; PNG/JPEG when built with OpenCV.
// Grayscale inputs are replicated to three channels.
Image read_image(const std::filesystem::path& path);

// Binary PPM, 8-bit, values clamped to [0, 1] and rounded.
void write_ppm(const Image& img, const std::filesystem::path& path);

bool image_codecs_available();

}  // namespace raffnet
