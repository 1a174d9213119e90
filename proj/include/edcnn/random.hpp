#pragma once

// Seed derivation and seeded dense random draws. Every stochastic component
// takes its own sub-seed, so results do not depend on evaluation order.

#include "edcnn/types.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace edcnn {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Sub-seed for a named component.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view component) {
  return splitmix64(seed ^ splitmix64(fnv1a64(component)));
}

/// Sub-seed for the index-th draw of a stream (per-sample seeding).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) + index);
}

inline MatrixXd random_gaussian(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd A(rows, cols);
  // Column-major fill keeps the draw order fixed.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) A(i, j) = normal(rng);
  return A;
}

inline VectorXd random_gaussian(Index n, Rng& rng) { return random_gaussian(n, 1, rng).col(0); }

/// Point drawn uniformly from the unit sphere in R^n.
inline VectorXd random_unit_vector(Index n, Rng& rng) {
  VectorXd v;
  do {
    v = random_gaussian(n, rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of diag(R) folded into Q.
inline MatrixXd random_orthogonal(Index n, Rng& rng) {
  const MatrixXd G = random_gaussian(n, n, rng);
  Eigen::HouseholderQR<MatrixXd> qr(G);
  MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, n);
  const MatrixXd& R = qr.matrixQR();
  for (Index j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);
  return Q;
}

}  // namespace edcnn
