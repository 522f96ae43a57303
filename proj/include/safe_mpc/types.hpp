#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace safe_mpc {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;

template <int N>
using RowVec = Eigen::Matrix<double, 1, N>;

template <int R, int C>
using Mat = Eigen::Matrix<double, R, C>;

/// Sentinel cost carried by samples that leave the safe set.
inline constexpr double kCostCap = 1e8;

class InvalidStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when the inverse barrier is evaluated at or outside the boundary.
class UnsafeEvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every sample of a batch hit the cost cap; there is nothing to average.
class DegenerateBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class Derived>
Eigen::Matrix<double, Derived::RowsAtCompileTime, Derived::RowsAtCompileTime>
diagonal_matrix(const Eigen::MatrixBase<Derived>& d) {
  return d.asDiagonal();
}

}  // namespace safe_mpc
