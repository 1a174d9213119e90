#pragma once

#include "edcnn/types.hpp"

#include <cstdint>

namespace edcnn {

struct PowerIterationOptions {
  int max_iterations = 200;
  double tolerance = 1e-12;
  std::uint64_t seed = 0x5eed;
};

struct SpectralNormResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  /// True when the power iteration did not settle and a dense SVD supplied the value.
  bool svd_fallback = false;
};

/// ||A||_2 by power iteration on A^T A from a seeded start vector.
SpectralNormResult spectral_norm_detailed(const MatrixXd& A, const PowerIterationOptions& options = {});

inline double spectral_norm(const MatrixXd& A, const PowerIterationOptions& options = {}) {
  return spectral_norm_detailed(A, options).value;
}

/// All min(rows, cols) singular values, descending.
VectorXd singular_values(const MatrixXd& A);

/// Smallest of the min(rows, cols) singular values; 0 for an empty matrix.
double sigma_min(const MatrixXd& A);
double sigma_max(const MatrixXd& A);

/// Rank with threshold max(rows, cols) * eps * sigma_max.
Index numerical_rank(const MatrixXd& A);

}  // namespace edcnn
