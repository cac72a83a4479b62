#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "raffnet/image.hpp"

namespace raffnet {

// Normalized center/size; the box always lies inside [0,1]^2.
struct AnchorBox {
  double cx = 0.5, cy = 0.5, w = 1.0, h = 1.0;

  bool inside_unit_square() const {
    return cx - w / 2 >= 0.0 && cx + w / 2 <= 1.0 && cy - h / 2 >= 0.0 && cy + h / 2 <= 1.0;
  }
  bool operator==(const AnchorBox&) const = default;
};

// Width:height.
struct AspectRatio {
  int w = 1, h = 1;
  double value() const { return static_cast<double>(w) / h; }
  std::string str() const { return std::to_string(w) + ":" + std::to_string(h); }
  bool operator==(const AspectRatio&) const = default;
};

AspectRatio parse_ratio(const std::string& text);

struct AnchorEntry {
  int rows = 1, cols = 1;
  AspectRatio ratio;
  double coverage = 1.0;
};

struct AnchorConfig {
  std::vector<AnchorEntry> entries;

  std::size_t count() const;
  void validate() const;
};

// 8x8 and 4x4 square grids plus 2:1, 1:2, 3:1, 1:3 on 5x5 grids: 180 boxes.
AnchorConfig default_anchor_config();
// Sweep layouts for 22, 37, 52, 85, 180, 353 and 564 anchors.
AnchorConfig anchor_preset(int count);
std::vector<int> anchor_preset_counts();

AnchorConfig anchor_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnchorConfig& config);
AnchorConfig load_anchor_config(const std::filesystem::path& path);

// One box per grid cell, entry order then row-major. Each box starts at
// cell extent * coverage, is reshaped to the entry's aspect ratio at equal
// area, and shrinks uniformly if it would leave the image.
std::vector<AnchorBox> generate_anchors(const AnchorConfig& config);

nlohmann::json to_json(const AnchorBox& box);

// Bilinear resampling of the box region, half-pixel centers
// (align_corners = false), edge-clamped.
template <typename Scalar>
Raster<Scalar> crop_resize(const Raster<Scalar>& img, const AnchorBox& box, Index out_h,
                           Index out_w) {
  if (out_h < 1 || out_w < 1) throw DataError("crop_resize: output size must be at least 1x1");
  if (img.empty()) throw DataError("crop_resize: empty image");
  const double H = static_cast<double>(img.height()), W = static_cast<double>(img.width());
  const double x0 = (box.cx - box.w / 2) * W, y0 = (box.cy - box.h / 2) * H;
  const double sx = box.w * W / static_cast<double>(out_w);
  const double sy = box.h * H / static_cast<double>(out_h);
  const Index max_x = img.width() - 1, max_y = img.height() - 1;

  // Precompute horizontal taps once per output column.
  std::vector<Index> xl(out_w), xr(out_w);
  std::vector<Scalar> fx(out_w);
  for (Index j = 0; j < out_w; ++j) {
    const double x = std::clamp(x0 + (j + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_x));
    xl[j] = static_cast<Index>(std::floor(x));
    xr[j] = std::min(xl[j] + 1, max_x);
    fx[j] = static_cast<Scalar>(x - xl[j]);
  }

  Raster<Scalar> out(out_h, out_w);
  for (Index i = 0; i < out_h; ++i) {
    const double y = std::clamp(y0 + (i + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_y));
    const Index yt = static_cast<Index>(std::floor(y));
    const Index yb = std::min(yt + 1, max_y);
    const auto fy = static_cast<Scalar>(y - yt);
    for (int c = 0; c < 3; ++c) {
      const auto& src = img.channels[c];
      auto& dst = out.channels[c];
      for (Index j = 0; j < out_w; ++j) {
        const Scalar top = src(yt, xl[j]) + fx[j] * (src(yt, xr[j]) - src(yt, xl[j]));
        const Scalar bot = src(yb, xl[j]) + fx[j] * (src(yb, xr[j]) - src(yb, xl[j]));
        dst(i, j) = top + fy * (bot - top);
      }
    }
  }
  return out;
}

}  // namespace raffnet
