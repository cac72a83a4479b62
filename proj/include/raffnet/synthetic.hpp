#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "raffnet/data.hpp"
#include "raffnet/image.hpp"
#include "raffnet/rng.hpp"

namespace raffnet {

// kArea: class set by the ochre-covered area fraction, blobs of any size.
// kSmallBlob: class set by the count of tiny blobs, total area under 5%.
enum class SynthKind { kArea, kSmallBlob };

std::string to_string(SynthKind k);
SynthKind parse_synth_kind(const std::string& s);

struct SynthSpec {
  SynthKind kind = SynthKind::kArea;
  int images = 400;
  int size = 64;
  int subjects = 20;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.6, 0.2, 0.2};
  // Annotation sidecar: fraction of records with one dissenting rater, and of
  // images written heavily blurred.
  double disagreement = 0.1;
  double blurred = 0.05;
};

struct SynthImage {
  Image image;
  double ochre_fraction = 0.0;
  int blobs = 0;
};

inline constexpr std::array<double, 3> kOchre{0.80, 0.60, 0.15};

SynthImage synth_image(SynthKind kind, int label, const std::array<double, 3>& tint, int size, Rng& rng);

struct PatchSet {
  std::vector<Image> positives;  // mucosa with an ochre blob
  std::vector<Image> negatives;  // mucosa only
};

// Patches for fitting the fecal adapter, count of each kind.
PatchSet calibration_patches(int count, int size, std::uint64_t seed);

struct SynthOutput {
  DatasetManifest manifest;
  std::filesystem::path manifest_path;
  std::filesystem::path annotations_path;
};

// Writes images/, manifest.jsonl (split assigned) and annotations.jsonl.
SynthOutput write_synthetic(const SynthSpec& spec, const std::filesystem::path& dir);

}  // namespace raffnet
