#include "raffnet/fecal.hpp"

#include <array>
#include <cmath>

namespace raffnet {

PromptBank make_prompt_bank(const TextEncoder& text, const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw DataError("prompt bank needs at least one prompt");
  PromptBank bank;
  bank.prompts = prompts;
  bank.embeddings.resize(static_cast<Index>(prompts.size()), text.embed_dim());
  for (std::size_t i = 0; i < prompts.size(); ++i)
    bank.embeddings.row(static_cast<Index>(i)) = l2_normalize(encode_text(text, prompts[i])).transpose();
  return bank;
}

std::string to_string(const Aggregation& agg) {
  switch (agg.mode) {
    case AggregationMode::kMax: return "max";
    case AggregationMode::kMean: return "mean";
    case AggregationMode::kTopKMean: return "topk_mean(" + std::to_string(agg.k) + ")";
  }
  return "max";
}

Aggregation parse_aggregation(const std::string& text) {
  if (text == "max") return {AggregationMode::kMax, 1};
  if (text == "mean") return {AggregationMode::kMean, 1};
  const std::string prefix = "topk_mean(";
  if (text.rfind(prefix, 0) == 0 && text.back() == ')') {
    try {
      const int k = std::stoi(text.substr(prefix.size(), text.size() - prefix.size() - 1));
      if (k >= 1) return {AggregationMode::kTopKMean, k};
    } catch (const std::exception&) {
    }
  }
  throw DataError("unknown aggregation '" + text + "' (expected max, mean or topk_mean(k))");
}

Matrix anchor_features(const Image& image, const std::vector<AnchorBox>& anchors, const ImageEncoder& backend) {
  if (anchors.empty()) throw DataError("fecal branch needs at least one anchor");
  const auto in = backend.native_input();
  Matrix out(static_cast<Index>(anchors.size()), backend.embed_dim());
  for (std::size_t a = 0; a < anchors.size(); ++a)
    out.row(static_cast<Index>(a)) =
        encode_image(backend, crop_resize(image, anchors[a], in.height, in.width)).transpose();
  return out;
}

Matrix embed_anchors(const Image& image, const std::vector<AnchorBox>& anchors, const ImageEncoder& backend,
                     const Adapter<double>& adapter) {
  return adapt_and_normalize(anchor_features(image, anchors, backend), adapter);
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct Moments {
  Matrix m, v;
};

void adam_update(Eigen::Ref<Matrix> p, const Matrix& g, Moments& st, double lr, int t) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.size() == 0) {
    st.m = Matrix::Zero(p.rows(), p.cols());
    st.v = Matrix::Zero(p.rows(), p.cols());
  }
  st.m = b1 * st.m + (1 - b1) * g;
  st.v = b2 * st.v + (1 - b2) * g.cwiseAbs2();
  const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
  p.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + eps);
}

}  // namespace

CalibrationResult calibrate_adapter(Adapter<double>& adapter, const Matrix& positives, const Matrix& negatives,
                                    const PromptBank& bank, const Aggregation& agg, const CalibrationOptions& opts) {
  if (positives.rows() == 0 || negatives.rows() == 0) throw DataError("calibration needs positive and negative patches");
  if (positives.cols() != adapter.dim() || negatives.cols() != adapter.dim())
    throw DimensionError("calibration features do not match the adapter width");
  if (opts.steps < 0 || !(opts.lr > 0)) throw DataError("invalid calibration options");

  const Index n = positives.rows() + negatives.rows();
  Matrix feats(n, adapter.dim());
  feats << positives, negatives;

  // Returns mean loss; accumulates gradients into grad when given.
  auto pass = [&](Adapter<double>* grad, double* pos_mean, double* neg_mean) {
    double loss = 0.0, ps = 0.0, ns = 0.0;
    for (Index i = 0; i < n; ++i) {
      const bool pos = i < positives.rows();
      const Vector f = feats.row(i).transpose();
      const Vector u = adapter_forward(adapter, f);
      const Matrix scores = similarity_scores<double>(l2_normalize(u).transpose(), bank.embeddings);
      const double z = aggregate(scores, agg)(0);
      (pos ? ps : ns) += z;
      const double logit = opts.temperature * (z - opts.center);
      loss += softplus(pos ? -logit : logit);
      if (!grad) continue;
      const double dz = opts.temperature * (sigmoid(logit) - (pos ? 1.0 : 0.0)) / static_cast<double>(n);
      const Matrix d_scores = aggregate_backward<double>(scores, agg, Vector::Constant(1, dz));
      const Vector d_unit = (d_scores * bank.embeddings).transpose();
      adapter_backward(adapter, f, l2_normalize_backward(u, d_unit), *grad);
    }
    if (pos_mean) *pos_mean = ps / static_cast<double>(positives.rows());
    if (neg_mean) *neg_mean = ns / static_cast<double>(negatives.rows());
    return loss / static_cast<double>(n);
  };

  CalibrationResult r;
  r.initial_loss = pass(nullptr, nullptr, nullptr);
  std::array<Moments, 4> state;
  for (int t = 1; t <= opts.steps; ++t) {
    Adapter<double> grad = adapter;
    grad.down.weight.setZero();
    grad.down.bias.setZero();
    grad.up.weight.setZero();
    grad.up.bias.setZero();
    pass(&grad, nullptr, nullptr);
    adam_update(adapter.down.weight, grad.down.weight, state[0], opts.lr, t);
    adam_update(adapter.down.bias, grad.down.bias, state[1], opts.lr, t);
    adam_update(adapter.up.weight, grad.up.weight, state[2], opts.lr, t);
    adam_update(adapter.up.bias, grad.up.bias, state[3], opts.lr, t);
  }
  r.final_loss = pass(nullptr, &r.positive_mean, &r.negative_mean);
  return r;
}

}  // namespace raffnet
