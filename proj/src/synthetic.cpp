#include "raffnet/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "raffnet/augment.hpp"

namespace raffnet {

namespace {

constexpr std::array<std::array<double, 2>, kNumClasses> kAreaRange{{{0.36, 0.42}, {0.22, 0.27}, {0.10, 0.14}, {0.0, 0.03}}};
constexpr std::array<int, kNumClasses> kBlobCount{10, 6, 3, 0};

Image mucosa(const std::array<double, 3>& tint, double tilt, int size, Rng& rng) {
  Image img(size, size);
  const double gx = rng.uniform(-tilt, tilt), gy = rng.uniform(-tilt, tilt);
  const double c = (size - 1) / 2.0;
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double r2 = ((x - c) * (x - c) + (y - c) * (y - c)) / (c * c);
      const double shade = 1.0 - 0.12 * r2 + gx * (x - c) / c + gy * (y - c) / c;
      const std::array<double, 3> base{0.78, 0.36, 0.34};
      for (int ch = 0; ch < 3; ++ch)
        img(ch, y, x) = std::clamp((base[ch] + tint[ch]) * shade + 0.02 * rng.normal(), 0.0, 1.0);
    }
  }
  return img;
}

// Paints an axis-aligned ellipse; returns the number of newly covered pixels.
int paint_blob(Image& img, std::vector<char>& mask, double cx, double cy, double rx, double ry, double jitter,
               Rng& rng) {
  const int size = static_cast<int>(img.width());
  const std::array<double, 3> color{kOchre[0] + rng.uniform(-jitter, jitter), kOchre[1] + rng.uniform(-jitter, jitter),
                                    kOchre[2] + rng.uniform(-jitter, jitter)};
  int added = 0;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx))), x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + rx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry))), y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + ry)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy > 1.0) continue;
      auto& m = mask[static_cast<std::size_t>(y * size + x)];
      added += !m;
      m = 1;
      for (int ch = 0; ch < 3; ++ch) img(ch, y, x) = std::clamp(color[static_cast<std::size_t>(ch)] + 0.02 * rng.normal(), 0.0, 1.0);
    }
  }
  return added;
}

}  // namespace

std::string to_string(SynthKind k) { return k == SynthKind::kArea ? "area" : "small-blob"; }

SynthKind parse_synth_kind(const std::string& s) {
  if (s == "area") return SynthKind::kArea;
  if (s == "small-blob") return SynthKind::kSmallBlob;
  throw DataError("unknown synthetic kind '" + s + "' (expected area or small-blob)");
}

SynthImage synth_image(SynthKind kind, int label, const std::array<double, 3>& tint, int size, Rng& rng) {
  if (label < 0 || label >= kNumClasses) throw DataError("synthetic label outside {0,1,2,3}");
  if (size < 16) throw DataError("synthetic images must be at least 16 pixels wide");
  const bool area = kind == SynthKind::kArea;
  SynthImage out{mucosa(tint, 0.02, size, rng), 0.0, 0};
  std::vector<char> mask(static_cast<std::size_t>(size * size), 0);
  const double total = static_cast<double>(size) * size;
  int covered = 0;

  if (area) {
    const auto& range = kAreaRange[static_cast<std::size_t>(label)];
    const double target = rng.uniform(range[0], range[1]);
    const double rmax = size / 6.0;
    for (int guard = 0; covered < target * total && guard < 10000; ++guard) {
      const double remaining = target * total - covered;
      const double r = std::clamp(std::sqrt(remaining / std::numbers::pi), 1.0, rmax) * rng.uniform(0.7, 1.0);
      const double aspect = rng.uniform(0.6, 1.6);
      const double cx = rng.uniform(0, size), cy = rng.uniform(0, size);
      covered += paint_blob(out.image, mask, cx, cy, std::max(1.0, r * aspect), std::max(1.0, r / aspect), 0.01, rng);
      ++out.blobs;
    }
  } else {
    const int count = kBlobCount[static_cast<std::size_t>(label)];
    std::vector<std::array<double, 2>> centers;
    while (static_cast<int>(centers.size()) < count) {
      const double cx = rng.uniform(3, size - 3), cy = rng.uniform(3, size - 3);
      const bool clear = std::none_of(centers.begin(), centers.end(), [&](const auto& c) {
        return std::hypot(c[0] - cx, c[1] - cy) < 6.0;
      });
      if (!clear) continue;
      centers.push_back({cx, cy});
      covered += paint_blob(out.image, mask, cx, cy, 2.2, 2.2, 0.03, rng);
    }
    out.blobs = count;
  }
  out.ochre_fraction = covered / total;
  return out;
}

PatchSet calibration_patches(int count, int size, std::uint64_t seed) {
  if (count < 1 || size < 4) throw DataError("calibration needs at least one patch of 4 pixels");
  PatchSet out;
  for (int i = 0; i < 2 * count; ++i) {
    Rng rng(mix_seed(mix_seed(seed, fnv1a("calibration")), static_cast<std::uint64_t>(i)));
    const std::array<double, 3> tint{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
    Image img = mucosa(tint, 0.05, size, rng);
    if (i % 2 == 0) {
      std::vector<char> mask(static_cast<std::size_t>(size * size), 0);
      const double r = rng.uniform(0.2, 0.35) * size;
      paint_blob(img, mask, rng.uniform(0, size), rng.uniform(0, size), r, r * rng.uniform(0.7, 1.4), 0.03, rng);
      out.positives.push_back(std::move(img));
    } else {
      out.negatives.push_back(std::move(img));
    }
  }
  return out;
}

SynthOutput write_synthetic(const SynthSpec& spec, const std::filesystem::path& dir) {
  if (spec.images < kNumClasses || spec.subjects < 1) throw DataError("synthetic set needs >= 4 images and a subject");
  if (spec.images < spec.subjects) throw DataError("fewer images than subjects");
  std::filesystem::create_directories(dir / "images");

  const double tint_span = spec.kind == SynthKind::kArea ? 0.01 : 0.0;
  std::vector<std::array<double, 3>> tints;
  for (int s = 0; s < spec.subjects; ++s) {
    Rng rng(mix_seed(spec.seed, fnv1a("subject" + std::to_string(s))));
    tints.push_back({rng.uniform(-tint_span, tint_span), rng.uniform(-tint_span, tint_span),
                     rng.uniform(-tint_span, tint_span)});
  }

  DatasetManifest manifest;
  manifest.root = dir;
  manifest.provenance = "synthetic " + to_string(spec.kind) + " set, seed " + std::to_string(spec.seed) + ", " +
                        std::to_string(spec.images) + " images of " + std::to_string(spec.size) + "px";
  std::vector<AnnotationRecord> annotations;
  char id[32];
  for (int i = 0; i < spec.images; ++i) {
    const int label = i % kNumClasses;
    const int subject = (i / kNumClasses) % spec.subjects;
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    SynthImage img = synth_image(spec.kind, label, tints[static_cast<std::size_t>(subject)], spec.size, rng);
    const bool blurred = rng.bernoulli(spec.blurred);
    if (blurred) img.image = gaussian_blur(img.image, 3.0);

    std::snprintf(id, sizeof(id), "img_%04d", i);
    ImageSample s;
    s.image_id = id;
    s.image_path = "images/" + s.image_id + ".ppm";
    std::snprintf(id, sizeof(id), "S%03d", subject);
    s.subject_id = id;
    s.label = label;
    write_ppm(img.image, dir / s.image_path);

    AnnotationRecord a{s.image_id, s.image_path, s.subject_id, {label, label, label}, {}};
    if (rng.bernoulli(spec.disagreement)) {
      const auto who = static_cast<std::size_t>(rng.below(3));
      a.rater_scores[who] = label == 0 ? 1 : label - 1;
    }
    annotations.push_back(a);
    manifest.samples.push_back(std::move(s));
  }
  manifest.recount();
  manifest = subject_disjoint_split(manifest, spec.ratios, spec.seed);

  SynthOutput out;
  out.manifest_path = dir / "manifest.jsonl";
  out.annotations_path = dir / "annotations.jsonl";
  write_manifest(manifest, out.manifest_path);
  std::ofstream ann(out.annotations_path, std::ios::binary);
  for (const auto& a : annotations) {
    nlohmann::ordered_json j;
    j["image_id"] = a.image_id;
    j["image_path"] = a.image_path;
    j["subject_id"] = a.subject_id;
    j["rater_scores"] = a.rater_scores;
    ann << j.dump() << '\n';
  }
  if (!ann) throw DataError("cannot write " + out.annotations_path.string());
  out.manifest = std::move(manifest);
  return out;
}

}  // namespace raffnet
