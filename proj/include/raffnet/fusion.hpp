#pragma once

#include <cmath>
#include <limits>

#include "raffnet/nn.hpp"

namespace raffnet {

template <typename Scalar>
struct FusionParams {
  Linear<Scalar> projection;  // A -> D
  Linear<Scalar> gate1;       // 2D -> D
  Linear<Scalar> gate2;       // D -> D
  Linear<Scalar> classifier;  // D -> 4

  FusionParams() = default;
  FusionParams(Index anchors, Index dim)
      : projection(anchors, dim), gate1(2 * dim, dim), gate2(dim, dim), classifier(dim, kNumClasses) {}

  Index dim() const { return classifier.in_dim(); }
  Index anchors() const { return projection.in_dim(); }
  bool operator==(const FusionParams&) const = default;
};

template <typename Scalar>
FusionParams<Scalar> make_fusion(Index anchors, Index dim, Rng& rng) {
  FusionParams<Scalar> f(anchors, dim);
  const auto inv_sqrt = [](Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  f.projection.init_normal(rng, inv_sqrt(anchors));
  f.gate1.init_normal(rng, inv_sqrt(2 * dim));
  f.gate2.init_normal(rng, inv_sqrt(dim));
  f.classifier.init_normal(rng, inv_sqrt(dim));
  return f;
}

template <typename Scalar>
struct FusionState {
  VectorT<Scalar> z_v, z_f, z_f_proj, alpha, z_all, logits;
};

template <typename Scalar, typename Derived>
VectorT<Scalar> project_fecal(const FusionParams<Scalar>& p, const Eigen::MatrixBase<Derived>& z_f) {
  require_dim(z_f.size(), p.anchors(), "fecal feature");
  return p.projection(z_f);
}

template <typename Scalar>
VectorT<Scalar> gate_input(const VectorT<Scalar>& z_v, const VectorT<Scalar>& z_f_proj) {
  VectorT<Scalar> cat(z_v.size() + z_f_proj.size());
  cat << z_v, z_f_proj;
  return cat;
}

// alpha = sigmoid(gate2(relu(gate1([z_v; z_f_proj])))).
template <typename Scalar>
VectorT<Scalar> gate(const FusionParams<Scalar>& p, const VectorT<Scalar>& z_v, const VectorT<Scalar>& z_f_proj) {
  require_dim(z_v.size(), p.dim(), "gate visual input");
  require_dim(z_f_proj.size(), p.dim(), "gate fecal input");
  // Keep alpha strictly inside (0, 1) where the sigmoid saturates in floating point.
  const Scalar lo = std::numeric_limits<Scalar>::min();
  const Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / Scalar(2);
  return sigmoid(p.gate2(relu(p.gate1(gate_input(z_v, z_f_proj))))).cwiseMax(lo).cwiseMin(hi);
}

template <typename Scalar>
VectorT<Scalar> fuse(const VectorT<Scalar>& z_v, const VectorT<Scalar>& z_f_proj, const VectorT<Scalar>& alpha) {
  require_dim(z_f_proj.size(), z_v.size(), "fuse fecal input");
  require_dim(alpha.size(), z_v.size(), "fuse gate");
  // alpha * z_v + (1 - alpha) * z_f_proj, written so equal inputs reproduce exactly;
  // the clamp pins the result to the segment under rounding.
  const auto v = z_v.array(), f = z_f_proj.array();
  return (f + alpha.array() * (v - f)).max(v.min(f)).min(v.max(f)).matrix();
}

template <typename Scalar, typename Derived>
VectorT<Scalar> classify(const FusionParams<Scalar>& p, const Eigen::MatrixBase<Derived>& z_all) {
  require_dim(z_all.size(), p.dim(), "classifier input");
  return p.classifier(z_all);
}

// argmax with ties to the lowest index.
template <typename Derived>
int predict(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() < 1 || !logits.allFinite()) throw DataError("predict: non-finite logits");
  int best = 0;
  for (Index i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = static_cast<int>(i);
  return best;
}

template <typename Scalar, typename Derived>
FusionState<Scalar> fusion_forward(const FusionParams<Scalar>& p, const VectorT<Scalar>& z_v,
                                   const Eigen::MatrixBase<Derived>& z_f) {
  FusionState<Scalar> s;
  s.z_v = z_v;
  s.z_f = z_f;
  s.z_f_proj = project_fecal(p, z_f);
  s.alpha = gate(p, z_v, s.z_f_proj);
  s.z_all = fuse(z_v, s.z_f_proj, s.alpha);
  s.logits = classify(p, s.z_all);
  return s;
}

template <typename Scalar>
struct FusionGrads {
  VectorT<Scalar> z_v, z_f;
};

// Backprop from dL/dlogits through classifier, fusion, gate and projection.
template <typename Scalar>
FusionGrads<Scalar> fusion_backward(const FusionParams<Scalar>& p, const FusionState<Scalar>& s,
                                    const VectorT<Scalar>& d_logits, FusionParams<Scalar>& grad) {
  const VectorT<Scalar> d_all = p.classifier.backward(s.z_all, d_logits, grad.classifier);
  const auto a = s.alpha.array();
  const VectorT<Scalar> d_alpha = (d_all.array() * (s.z_v - s.z_f_proj).array()).matrix();
  VectorT<Scalar> d_v = (d_all.array() * a).matrix();
  VectorT<Scalar> d_proj = (d_all.array() * (Scalar(1) - a)).matrix();

  const VectorT<Scalar> cat = gate_input(s.z_v, s.z_f_proj);
  const VectorT<Scalar> pre1 = p.gate1(cat);
  const VectorT<Scalar> hidden = relu(pre1);
  const VectorT<Scalar> d_pre2 = (d_alpha.array() * a * (Scalar(1) - a)).matrix();
  VectorT<Scalar> d_hidden = p.gate2.backward(hidden, d_pre2, grad.gate2);
  d_hidden = (pre1.array() > Scalar(0)).select(d_hidden, Scalar(0));
  const VectorT<Scalar> d_cat = p.gate1.backward(cat, d_hidden, grad.gate1);
  const Index d = s.z_v.size();
  d_v += d_cat.head(d);
  d_proj += d_cat.tail(d);

  FusionGrads<Scalar> out;
  out.z_v = d_v;
  out.z_f = p.projection.backward(s.z_f, d_proj, grad.projection);
  return out;
}

}  // namespace raffnet
