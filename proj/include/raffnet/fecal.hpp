#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "raffnet/anchors.hpp"
#include "raffnet/encoder.hpp"

namespace raffnet {

inline const std::vector<std::string>& default_prompts() {
  static const std::vector<std::string> p{"yellow stool", "residual feces"};
  return p;
}

// Prompt strings and their unit-norm text embeddings, one row per prompt.
struct PromptBank {
  std::vector<std::string> prompts;
  Matrix embeddings;  // P x D

  Index size() const { return embeddings.rows(); }
  Index dim() const { return embeddings.cols(); }
};

PromptBank make_prompt_bank(const TextEncoder& text, const std::vector<std::string>& prompts);

enum class AggregationMode { kMax, kMean, kTopKMean };

struct Aggregation {
  AggregationMode mode = AggregationMode::kMax;
  int k = 1;  // topk_mean only
};

std::string to_string(const Aggregation& agg);
Aggregation parse_aggregation(const std::string& text);

// Backbone features of every anchor patch (A x D), before the adapter.
Matrix anchor_features(const Image& image, const std::vector<AnchorBox>& anchors, const ImageEncoder& backend);

// Row a = l2_normalize(adapter(encode(crop_resize(image, anchors[a])))).
Matrix embed_anchors(const Image& image, const std::vector<AnchorBox>& anchors, const ImageEncoder& backend,
                     const Adapter<double>& adapter);

// Adapter + normalization applied to precomputed backbone features.
template <typename Scalar>
MatrixT<Scalar> adapt_and_normalize(const MatrixT<Scalar>& features, const Adapter<Scalar>& adapter) {
  MatrixT<Scalar> out(features.rows(), features.cols());
  for (Index a = 0; a < features.rows(); ++a)
    out.row(a) = l2_normalize(adapter_forward(adapter, features.row(a).transpose())).transpose();
  return out;
}

// Cosine similarity of unit rows: (A x D) . (P x D)^T.
template <typename Scalar>
MatrixT<Scalar> similarity_scores(const MatrixT<Scalar>& anchor_embs, const MatrixT<Scalar>& prompt_embs) {
  if (anchor_embs.cols() != prompt_embs.cols())
    throw DimensionError("similarity_scores: embedding dims differ (" + std::to_string(anchor_embs.cols()) +
                         " vs " + std::to_string(prompt_embs.cols()) + ")");
  // Clamp guards the [-1, 1] contract against rounding on unit vectors.
  return (anchor_embs * prompt_embs.transpose()).cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

inline Matrix similarity_scores(const Matrix& anchor_embs, const PromptBank& bank) {
  return similarity_scores<double>(anchor_embs, bank.embeddings);
}

// Reduces each row of the A x P score matrix to one value.
template <typename Scalar>
VectorT<Scalar> aggregate(const MatrixT<Scalar>& scores, const Aggregation& agg) {
  if (scores.rows() < 1 || scores.cols() < 1) throw DataError("aggregate: empty score matrix");
  switch (agg.mode) {
    case AggregationMode::kMax:
      return scores.rowwise().maxCoeff();
    case AggregationMode::kMean:
      return scores.rowwise().mean();
    case AggregationMode::kTopKMean: {
      if (agg.k < 1 || agg.k > scores.cols()) throw DataError("aggregate: invalid k for topk_mean");
      VectorT<Scalar> out(scores.rows());
      for (Index a = 0; a < scores.rows(); ++a) {
        std::vector<Scalar> row(static_cast<std::size_t>(scores.cols()));
        for (Index p = 0; p < scores.cols(); ++p) row[static_cast<std::size_t>(p)] = scores(a, p);
        std::partial_sort(row.begin(), row.begin() + agg.k, row.end(), std::greater<>());
        Scalar s(0);
        for (int i = 0; i < agg.k; ++i) s += row[static_cast<std::size_t>(i)];
        out(a) = s / Scalar(agg.k);
      }
      return out;
    }
  }
  return {};
}

// dL/dscores given dL/dz_f. Max routes to the first maximal entry; top-k to
// the k largest with ties broken by lower prompt index.
template <typename Scalar>
MatrixT<Scalar> aggregate_backward(const MatrixT<Scalar>& scores, const Aggregation& agg,
                                   const VectorT<Scalar>& grad_out) {
  MatrixT<Scalar> g = MatrixT<Scalar>::Zero(scores.rows(), scores.cols());
  for (Index a = 0; a < scores.rows(); ++a) {
    switch (agg.mode) {
      case AggregationMode::kMax: {
        Index arg = 0;
        scores.row(a).maxCoeff(&arg);
        g(a, arg) = grad_out(a);
        break;
      }
      case AggregationMode::kMean:
        g.row(a).setConstant(grad_out(a) / Scalar(scores.cols()));
        break;
      case AggregationMode::kTopKMean: {
        std::vector<Index> idx(static_cast<std::size_t>(scores.cols()));
        for (Index p = 0; p < scores.cols(); ++p) idx[static_cast<std::size_t>(p)] = p;
        std::stable_sort(idx.begin(), idx.end(), [&](Index l, Index r) { return scores(a, l) > scores(a, r); });
        for (int i = 0; i < agg.k; ++i) g(a, idx[static_cast<std::size_t>(i)]) = grad_out(a) / Scalar(agg.k);
        break;
      }
    }
  }
  return g;
}

struct CalibrationOptions {
  int steps = 1000;
  double lr = 3e-2;
  double center = 0.25;  // aggregated similarity separating the two sets
  double temperature = 10.0;
};

struct CalibrationResult {
  double initial_loss = 0.0, final_loss = 0.0;
  double positive_mean = 0.0, negative_mean = 0.0;  // aggregated similarity after the fit
};

// Logistic fit of the adapter so that aggregated prompt similarity is high on
// positive patch features and low on negative ones. Rows are backbone features.
// Stands in for vision-language alignment that a pretrained backend would bring.
CalibrationResult calibrate_adapter(Adapter<double>& adapter, const Matrix& positives, const Matrix& negatives,
                                    const PromptBank& bank, const Aggregation& agg,
                                    const CalibrationOptions& opts = {});

}  // namespace raffnet
