#pragma once

#include <cmath>
#include <limits>
#include <type_traits>

#include "raffnet/rng.hpp"
#include "raffnet/types.hpp"

namespace raffnet {

// y = W x + b, W stored out x in.
template <typename Scalar>
struct Linear {
  MatrixT<Scalar> weight;
  VectorT<Scalar> bias;

  Linear() = default;
  Linear(Index in, Index out) : weight(MatrixT<Scalar>::Zero(out, in)), bias(VectorT<Scalar>::Zero(out)) {}

  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }

  template <typename Derived>
  VectorT<Scalar> operator()(const Eigen::MatrixBase<Derived>& x) const {
    require_dim(x.size(), in_dim(), "linear input");
    return weight * x + bias;
  }

  // Accumulates parameter gradients into grad; returns dL/dx.
  template <typename DX, typename DY>
  VectorT<Scalar> backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& grad_out,
                           Linear& grad) const {
    grad.weight.noalias() += grad_out * x.transpose();
    grad.bias += grad_out;
    return weight.transpose() * grad_out;
  }

  void init_normal(Rng& rng, double stddev) {
    for (Index i = 0; i < weight.size(); ++i) weight.data()[i] = static_cast<Scalar>(stddev * rng.normal());
    bias.setZero();
  }

  bool operator==(const Linear& other) const { return weight == other.weight && bias == other.bias; }
};

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.cwiseMax(Scalar(0));
}

template <typename Scalar>
  requires std::is_floating_point_v<Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
VectorT<typename Derived::Scalar> sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return sigmoid(v); });
}

template <typename Derived>
VectorT<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = logits.maxCoeff();
  VectorT<Scalar> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& x) {
  return x.allFinite();
}

// -log softmax(logits)[label], max-subtracted.
template <typename Derived>
typename Derived::Scalar ce_loss(const Eigen::MatrixBase<Derived>& logits, int label) {
  using Scalar = typename Derived::Scalar;
  if (!logits.allFinite()) throw NonFiniteError("ce_loss: non-finite logits");
  if (label < 0 || label >= logits.size()) throw DataError("ce_loss: label out of range");
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return std::max(Scalar(0), lse - logits(label));
}

template <typename Derived>
VectorT<typename Derived::Scalar> ce_loss_grad(const Eigen::MatrixBase<Derived>& logits, int label) {
  VectorT<typename Derived::Scalar> g = softmax(logits);
  g(label) -= 1;
  return g;
}

template <typename Derived>
VectorT<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  const auto n = v.norm();
  if (!(n > 1e-12)) throw DataError("l2_normalize: vector norm below 1e-12");
  return v / n;
}

// Gradient through u -> u / |u| given dL/d(normalized).
template <typename DU, typename DG>
VectorT<typename DU::Scalar> l2_normalize_backward(const Eigen::MatrixBase<DU>& u,
                                                   const Eigen::MatrixBase<DG>& grad_out) {
  const auto n = u.norm();
  const VectorT<typename DU::Scalar> unit = u / n;
  return (grad_out - unit * unit.dot(grad_out)) / n;
}

}  // namespace raffnet
