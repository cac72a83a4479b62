#include "raffnet/anchors.hpp"

#include <fstream>

namespace raffnet {

AspectRatio parse_ratio(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw DataError("aspect ratio must look like 'w:h': " + text);
  try {
    std::size_t a = 0, b = 0;
    const int w = std::stoi(text.substr(0, colon), &a);
    const int h = std::stoi(text.substr(colon + 1), &b);
    if (a != colon || b != text.size() - colon - 1 || w < 1 || h < 1) throw std::invalid_argument("");
    return {w, h};
  } catch (const std::exception&) {
    throw DataError("invalid aspect ratio: " + text);
  }
}

std::size_t AnchorConfig::count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += static_cast<std::size_t>(e.rows) * static_cast<std::size_t>(e.cols);
  return n;
}

void AnchorConfig::validate() const {
  if (entries.empty()) throw DataError("anchor config has no entries");
  for (const auto& e : entries) {
    if (e.rows < 1 || e.cols < 1) throw DataError("anchor grid dimensions must be >= 1");
    if (e.ratio.w < 1 || e.ratio.h < 1) throw DataError("aspect ratio terms must be >= 1");
    if (!(e.coverage > 0.0 && e.coverage <= 1.0)) throw DataError("anchor coverage must be in (0, 1]");
  }
}

AnchorConfig default_anchor_config() {
  return {{
      {8, 8, {1, 1}, 1.0},
      {4, 4, {1, 1}, 1.0},
      {5, 5, {2, 1}, 1.0},
      {5, 5, {1, 2}, 1.0},
      {5, 5, {3, 1}, 1.0},
      {5, 5, {1, 3}, 1.0},
  }};
}

namespace {

std::vector<AnchorEntry> elongated(int rows, int cols) {
  // Wide boxes on row-dense grids, tall boxes on column-dense grids.
  return {{rows, cols, {2, 1}, 1.0}, {cols, rows, {1, 2}, 1.0}, {rows, cols, {3, 1}, 1.0}, {cols, rows, {1, 3}, 1.0}};
}

AnchorConfig with_elongated(std::vector<AnchorEntry> squares, int rows, int cols) {
  for (auto& e : elongated(rows, cols)) squares.push_back(e);
  return {std::move(squares)};
}

}  // namespace

std::vector<int> anchor_preset_counts() { return {22, 37, 52, 85, 180, 353, 564}; }

AnchorConfig anchor_preset(int count) {
  switch (count) {
    case 22:
      return {{{4, 4, {1, 1}, 1.0}, {2, 2, {1, 1}, 1.0}, {1, 1, {2, 1}, 1.0}, {1, 1, {1, 2}, 1.0}}};
    case 37:
      return {{{4, 4, {1, 1}, 1.0}, {3, 3, {1, 1}, 1.0}, {3, 2, {2, 1}, 1.0}, {2, 3, {1, 2}, 1.0}}};
    case 52:
      return with_elongated({{4, 4, {1, 1}, 1.0}}, 3, 3);
    case 85:
      return with_elongated({{6, 6, {1, 1}, 1.0}, {3, 3, {1, 1}, 1.0}, {2, 2, {1, 1}, 1.0}}, 3, 3);
    case 180:
      return default_anchor_config();
    case 353:
      return with_elongated(
          {{12, 12, {1, 1}, 1.0}, {8, 8, {1, 1}, 1.0}, {4, 4, {1, 1}, 1.0}, {1, 1, {1, 1}, 1.0}}, 8, 4);
    case 564:
      return with_elongated({{16, 16, {1, 1}, 1.0}, {12, 12, {1, 1}, 1.0}, {6, 6, {1, 1}, 1.0}}, 8, 4);
    default:
      break;
  }
  throw DataError("no anchor preset with " + std::to_string(count) + " anchors");
}

AnchorConfig anchor_config_from_json(const nlohmann::json& j) {
  AnchorConfig cfg;
  try {
    for (const auto& e : j.at("entries")) {
      AnchorEntry entry;
      entry.rows = e.at("rows").get<int>();
      entry.cols = e.at("cols").get<int>();
      entry.ratio = parse_ratio(e.value("ratio", std::string("1:1")));
      entry.coverage = e.value("coverage", 1.0);
      cfg.entries.push_back(entry);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed anchor config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const AnchorConfig& config) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : config.entries)
    entries.push_back({{"rows", e.rows}, {"cols", e.cols}, {"ratio", e.ratio.str()}, {"coverage", e.coverage}});
  return {{"entries", entries}};
}

AnchorConfig load_anchor_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open anchor config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return anchor_config_from_json(j);
}

nlohmann::json to_json(const AnchorBox& box) {
  return {{"cx", box.cx}, {"cy", box.cy}, {"w", box.w}, {"h", box.h}};
}

std::vector<AnchorBox> generate_anchors(const AnchorConfig& config) {
  config.validate();
  std::vector<AnchorBox> boxes;
  boxes.reserve(config.count());
  for (const auto& e : config.entries) {
    const double cell_w = 1.0 / e.cols, cell_h = 1.0 / e.rows;
    const double area = cell_w * cell_h * e.coverage * e.coverage;
    const double r = e.ratio.value();
    const double w0 = e.ratio.w == e.ratio.h ? std::sqrt(area) : std::sqrt(area * r);
    const double h0 = e.ratio.w == e.ratio.h ? w0 : std::sqrt(area / r);
    for (int i = 0; i < e.rows; ++i) {
      for (int j = 0; j < e.cols; ++j) {
        AnchorBox b;
        b.cx = (j + 0.5) / e.cols;
        b.cy = (i + 0.5) / e.rows;
        double s = std::min({1.0, 2 * b.cx / w0, 2 * (1 - b.cx) / w0, 2 * b.cy / h0, 2 * (1 - b.cy) / h0});
        b.w = w0 * s;
        b.h = h0 * s;
        // Rounding can leave the box a hair outside; shrink further, still uniformly.
        for (int guard = 0; !b.inside_unit_square(); ++guard) {
          if (guard > 64) throw DataError("anchor cannot be fitted inside the image");
          s *= 1.0 - 1e-12;
          b.w = w0 * s;
          b.h = h0 * s;
        }
        if (!(b.w > 0.0 && b.h > 0.0)) throw DataError("degenerate anchor box");
        boxes.push_back(b);
      }
    }
  }
  return boxes;
}

}  // namespace raffnet
