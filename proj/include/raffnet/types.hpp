#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace raffnet {

inline constexpr int kNumClasses = 4;

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorT<double>;
using Matrix = MatrixT<double>;
using Index = Eigen::Index;

// Invalid input data: malformed files, violated invariants, bad shapes.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class NonFiniteError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss during optimization.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : std::runtime_error(what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

inline void require_dim(Index got, Index want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(want) +
                         ", got " + std::to_string(got));
  }
}

}  // namespace raffnet
