#include "edcnn/spectral.hpp"

#include "edcnn/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace edcnn {

SpectralNormResult spectral_norm_detailed(const MatrixXd& A, const PowerIterationOptions& options) {
  SpectralNormResult res;
  if (A.size() == 0) {
    res.converged = true;
    return res;
  }
  if (A.isZero(0.0)) {
    res.converged = true;
    return res;
  }
  Rng rng(options.seed);
  VectorXd v = random_unit_vector(A.cols(), rng);
  double estimate = 0.0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const VectorXd Av = A * v;
    const double next = Av.norm();
    VectorXd w = A.transpose() * Av;
    const double wn = w.norm();
    res.iterations = it;
    if (wn == 0.0) {
      // Start vector in the null space; restart from a fresh direction.
      v = random_unit_vector(A.cols(), rng);
      continue;
    }
    v = w / wn;
    if (std::abs(next - estimate) <= options.tolerance * std::max(next, 1.0)) {
      // One more product with the refined vector gives the reported value.
      estimate = std::max(next, (A * v).norm());
      res.converged = true;
      break;
    }
    estimate = next;
  }
  if (!res.converged) {
    estimate = sigma_max(A);
    res.svd_fallback = true;
  }
  res.value = estimate;
  return res;
}

VectorXd singular_values(const MatrixXd& A) {
  if (A.size() == 0) return VectorXd();
  Eigen::JacobiSVD<MatrixXd> svd(A);
  return svd.singularValues();
}

double sigma_min(const MatrixXd& A) {
  const VectorXd s = singular_values(A);
  return s.size() == 0 ? 0.0 : s.minCoeff();
}

double sigma_max(const MatrixXd& A) {
  const VectorXd s = singular_values(A);
  return s.size() == 0 ? 0.0 : s.maxCoeff();
}

Index numerical_rank(const MatrixXd& A) {
  const VectorXd s = singular_values(A);
  if (s.size() == 0) return 0;
  const double threshold = static_cast<double>(std::max(A.rows(), A.cols())) *
                           std::numeric_limits<double>::epsilon() * s.maxCoeff();
  return static_cast<Index>((s.array() > threshold).count());
}

}  // namespace edcnn
