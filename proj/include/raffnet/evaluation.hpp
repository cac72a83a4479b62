#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "raffnet/data.hpp"
#include "raffnet/model.hpp"
#include "raffnet/store.hpp"

namespace raffnet {

// Round half up to 2 decimals.
double round2(double v);

// Per-class recall (true-class rows) in percent, mean over present classes.
struct EvalReport {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> confusion{};  // [true][predicted]
  std::array<double, kNumClasses> per_class_acc{};  // NaN for classes absent from the split
  double macro_avg = 0.0;                           // 2 decimals
  double micro_avg = 0.0;                           // overall accuracy, 2 decimals
  std::int64_t n = 0;

  std::int64_t row_sum(int c) const;
  bool present(int c) const { return row_sum(c) > 0; }
};

// Mean of the per-class values, rounded half up to 2 decimals.
double macro_avg(const std::array<double, kNumClasses>& per_class);

EvalReport tally(const std::vector<int>& labels, const std::vector<int>& predictions);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct Prediction {
  std::string image_id;
  int label = 0;
  int predicted = 0;
  Vector logits;
};

struct Evaluation {
  EvalReport report;
  std::vector<Prediction> predictions;
};

// Read-only inference over one split. cache may be null.
Evaluation evaluate(const RaffNet& model, const DatasetManifest& manifest, Split split, const ImageStore& images,
                    FeatureCache* cache = nullptr);

enum class DistanceMode { kCentroid, kAllPairs };

struct DatasetStats {
  double intra_dist = 0.0;
  double inter_dist = 0.0;
  std::array<int, kNumClasses> per_class_counts{};
  std::size_t n_subjects = 0;
};

// intra: mean over classes (>= 2 members) of the mean within-class pairwise
// distance. inter: mean distance between class centroids over unordered
// class pairs, or the mean of all between-class point pairs in kAllPairs mode.
std::pair<double, double> intra_inter_distance(const Matrix& features, const std::vector<int>& labels,
                                               DistanceMode mode = DistanceMode::kCentroid);

// Top-2 principal components of the centered rows. Axis signs make the
// largest-magnitude loading of each component positive.
Matrix embed_2d(const Matrix& features);

enum class ReportFormat { kMarkdown, kCsv, kJson };
ReportFormat parse_report_format(const std::string& s);

using NamedReport = std::pair<std::string, EvalReport>;
std::string render_report(const std::vector<NamedReport>& reports, ReportFormat format);

struct ReportRow {
  std::string name;
  std::array<double, kNumClasses> per_class{};
  double avg = 0.0;
  double micro = 0.0;
};
std::vector<ReportRow> parse_report_csv(const std::string& csv);

std::string stats_csv(const DatasetStats& stats);

}  // namespace raffnet
