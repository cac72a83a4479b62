#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "raffnet/image.hpp"

namespace raffnet {

enum class Split { kUnassigned, kTrain, kVal, kTest };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct AnnotationRecord {
  std::string image_id;
  std::string image_path;
  std::string subject_id;
  std::vector<int> rater_scores;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct ImageSample {
  std::string image_id;
  std::string image_path;  // relative to the manifest directory
  std::string subject_id;
  int label = 0;
  Split split = Split::kUnassigned;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct DatasetManifest {
  std::vector<ImageSample> samples;
  std::string provenance;
  std::array<int, kNumClasses> per_class_counts{};
  std::filesystem::path root;  // directory image paths resolve against

  std::filesystem::path resolve(const ImageSample& s) const { return root / s.image_path; }
  std::vector<const ImageSample*> split(Split which) const;
  std::size_t subject_count() const;
  void recount();
};

struct LoadOptions {
  bool check_files = true;
};

// JSON Lines; throws DataError with the 1-based line number on any violation.
DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& root,
                               const LoadOptions& opts = {});
std::string manifest_to_jsonl(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);
std::vector<AnnotationRecord> parse_annotations(const std::string& text);

struct ConsensusResult {
  std::vector<ImageSample> retained;
  std::vector<AnnotationRecord> dropped;
};

// Keeps a record iff all three rater scores agree.
ConsensusResult consensus_filter(const std::vector<AnnotationRecord>& records);

// Variance of the 3x3 Laplacian response over the luma plane (valid region).
template <typename Scalar>
Scalar blur_score(const Raster<Scalar>& img) {
  if (img.height() < 3 || img.width() < 3) throw DataError("blur_score: image smaller than 3x3");
  const auto y = luma(img);
  const Index h = y.rows() - 2, w = y.cols() - 2;
  const auto lap = (y.block(0, 1, h, w) + y.block(2, 1, h, w) + y.block(1, 0, h, w) +
                    y.block(1, 2, h, w) - Scalar(4) * y.block(1, 1, h, w))
                       .eval();
  const Scalar mean = lap.mean();
  return (lap.array() - mean).square().mean();
}

struct BlurFilterResult {
  std::vector<ImageSample> retained;
  std::vector<ImageSample> dropped;
  std::vector<double> scores;           // aligned with the input
  std::vector<std::string> borderline;  // within 10% of the threshold
};

BlurFilterResult filter_blurred(const std::vector<ImageSample>& samples, double threshold,
                                const std::filesystem::path& root);
// Same rule over precomputed scores; returns indices retained.
std::vector<std::size_t> filter_by_score(const std::vector<double>& scores, double threshold);

// Subject-level split. Per-split subject counts are floor(ratio * n) with the
// remainder going to train; assignment depends only on (seed, sorted ids).
DatasetManifest subject_disjoint_split(const DatasetManifest& manifest,
                                       const std::array<double, 3>& ratios, std::uint64_t seed);

}  // namespace raffnet
