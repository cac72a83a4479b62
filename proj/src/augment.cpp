#include "raffnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "raffnet/rng.hpp"

namespace raffnet {

bool AugmentSpec::is_identity() const {
  return hflip_prob == 0 && rotation_degrees == 0 && brightness == 0 && contrast == 0 && saturation == 0 &&
         blur_prob == 0;
}

void AugmentSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(hflip_prob) || !prob(blur_prob)) throw DataError("augmentation probabilities must be in [0, 1]");
  if (!(rotation_degrees >= 0.0)) throw DataError("rotation degrees must be >= 0");
  if (!(brightness >= 0 && brightness < 1 && contrast >= 0 && contrast < 1 && saturation >= 0 && saturation < 1))
    throw DataError("color jitter strengths must be in [0, 1)");
  if (!(blur_sigma_min > 0 && blur_sigma_max >= blur_sigma_min)) throw DataError("invalid blur sigma range");
}

nlohmann::json to_json(const AugmentSpec& s) {
  return {{"hflip_prob", s.hflip_prob},   {"rotation_degrees", s.rotation_degrees},
          {"brightness", s.brightness},   {"contrast", s.contrast},
          {"saturation", s.saturation},   {"blur_prob", s.blur_prob},
          {"blur_sigma_min", s.blur_sigma_min}, {"blur_sigma_max", s.blur_sigma_max}};
}

AugmentSpec augment_spec_from_json(const nlohmann::json& j) {
  AugmentSpec s;
  try {
    s.hflip_prob = j.value("hflip_prob", s.hflip_prob);
    s.rotation_degrees = j.value("rotation_degrees", s.rotation_degrees);
    if (j.contains("color_jitter")) {
      const auto& cj = j.at("color_jitter");
      s.brightness = cj.at(0).get<double>();
      s.contrast = cj.at(1).get<double>();
      s.saturation = cj.at(2).get<double>();
    }
    s.brightness = j.value("brightness", s.brightness);
    s.contrast = j.value("contrast", s.contrast);
    s.saturation = j.value("saturation", s.saturation);
    s.blur_prob = j.value("blur_prob", s.blur_prob);
    s.blur_sigma_min = j.value("blur_sigma_min", s.blur_sigma_min);
    s.blur_sigma_max = j.value("blur_sigma_max", s.blur_sigma_max);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed augmentation spec: ") + e.what());
  }
  s.validate();
  return s;
}

Image hflip(const Image& image) {
  Image out = image;
  for (auto& c : out.channels) c = c.rowwise().reverse().eval();
  return out;
}

namespace {

Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void clamp01(Image& img) {
  for (auto& c : img.channels) c = c.cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace

Image rotate(const Image& image, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const Index h = image.height(), w = image.width();
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Image out(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      // Inverse mapping: rotate output coordinates back into the source.
      const double dx = x - cx, dy = y - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const Index x0 = reflect(static_cast<Index>(fx0), w), x1 = reflect(static_cast<Index>(fx0) + 1, w);
      const Index y0 = reflect(static_cast<Index>(fy0), h), y1 = reflect(static_cast<Index>(fy0) + 1, h);
      for (int c = 0; c < 3; ++c) {
        const auto& src = image.channels[c];
        const double top = src(y0, x0) + fx * (src(y0, x1) - src(y0, x0));
        const double bot = src(y1, x0) + fx * (src(y1, x1) - src(y1, x0));
        out(c, y, x) = top + fy * (bot - top);
      }
    }
  }
  return out;
}

Image adjust_brightness(const Image& image, double factor) {
  Image out = scaled(image, factor);
  clamp01(out);
  return out;
}

Image adjust_contrast(const Image& image, double factor) {
  const double mean = luma(image).mean();
  Image out = image;
  for (auto& c : out.channels) c = ((c.array() - mean) * factor + mean).matrix();
  clamp01(out);
  return out;
}

Image adjust_saturation(const Image& image, double factor) {
  const auto gray = luma(image);
  Image out = image;
  for (auto& c : out.channels) c = ((c - gray) * factor + gray).eval();
  clamp01(out);
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;

  const Index h = image.height(), w = image.width();
  Image tmp(h, w), out(h, w);
  for (int c = 0; c < 3; ++c) {
    const auto& src = image.channels[c];
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * src(y, reflect(x + i, w));
        tmp(c, y, x) = acc;
      }
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.channels[c](reflect(y + i, h), x);
        out(c, y, x) = acc;
      }
  }
  return out;
}

Image augment(const Image& image, const AugmentSpec& spec, std::uint64_t sample_seed) {
  Rng rng(sample_seed);
  const bool flip = rng.bernoulli(spec.hflip_prob);
  const double angle = rng.uniform(-spec.rotation_degrees, spec.rotation_degrees);
  const double b = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
  const double c = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
  const double s = rng.uniform(1.0 - spec.saturation, 1.0 + spec.saturation);
  const bool blur = rng.bernoulli(spec.blur_prob);
  const double sigma = rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max);

  Image out = image;
  if (flip) out = hflip(out);
  if (spec.rotation_degrees > 0) out = rotate(out, angle);
  if (spec.brightness > 0) out = adjust_brightness(out, b);
  if (spec.contrast > 0) out = adjust_contrast(out, c);
  if (spec.saturation > 0) out = adjust_saturation(out, s);
  if (blur) out = gaussian_blur(out, sigma);
  return out;
}

}  // namespace raffnet
