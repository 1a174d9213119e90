#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace edcnn {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Thrown when operand shapes do not agree with each other or with a NetworkSpec.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a construction precondition that is not a shape mismatch fails
/// (non-contracting pooling, unmet channel growth, missing pooling, ...).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown by derivative-based checks when a ReLU pre-activation sits closer
/// to zero than the configured margin.
class KinkMarginError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

}  // namespace detail

}  // namespace edcnn
