#pragma once

#include <cstdint>

#include <json.hpp>

#include "raffnet/image.hpp"

namespace raffnet {

struct AugmentSpec {
  double hflip_prob = 0.5;
  double rotation_degrees = 15.0;  // uniform in +/- degrees
  double brightness = 0.2;         // multiplicative factor in 1 +/- strength
  double contrast = 0.2;
  double saturation = 0.2;
  double blur_prob = 0.2;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 1.0;

  static AugmentSpec none() { return {0, 0, 0, 0, 0, 0, 0.1, 1.0}; }
  bool is_identity() const;
  void validate() const;
};

nlohmann::json to_json(const AugmentSpec& spec);
AugmentSpec augment_spec_from_json(const nlohmann::json& j);

// All randomness is drawn from sample_seed, in a fixed order, regardless of
// which transforms end up applied.
Image augment(const Image& image, const AugmentSpec& spec, std::uint64_t sample_seed);

Image hflip(const Image& image);
// Rotation about the image center, bilinear, reflect padding.
Image rotate(const Image& image, double degrees);
Image adjust_brightness(const Image& image, double factor);
Image adjust_contrast(const Image& image, double factor);
Image adjust_saturation(const Image& image, double factor);
Image gaussian_blur(const Image& image, double sigma);

}  // namespace raffnet
