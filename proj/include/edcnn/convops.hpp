#pragma once

// Periodic (circular) convolution and wrap-around Hankel matrices.
//
// Conventions, for x of period n:
//   flip(v)[k]            = v[(-k) mod n]
//   hankel(x, r)(i, j)    = x[(i + j) mod n]                 (n x r)
//   circ_conv(x, h)[t]    = sum_k x[(t - k) mod n] h[k]
//   correlate(x, psi)     = hankel(x, r) * psi = circ_conv(x, flip(psi))
// A vector shorter than the period is zero-padded at the end. Filters are
// stored untransposed; the flipped filter only appears through correlate().

#include "edcnn/types.hpp"

#include <algorithm>
#include <cmath>

namespace edcnn {

namespace detail {

inline Index wrap(Index i, Index n) {
  const Index k = i % n;
  return k < 0 ? k + n : k;
}

}  // namespace detail

/// Zero-pads (or returns unchanged) a vector to period n.
template <typename Derived>
Vector<typename Derived::Scalar> zero_pad(const Eigen::MatrixBase<Derived>& v, Index n) {
  using Scalar = typename Derived::Scalar;
  detail::require(v.size() <= n, "zero_pad: vector longer than target period");
  Vector<Scalar> out = Vector<Scalar>::Zero(n);
  out.head(v.size()) = v;
  return out;
}

/// Periodic index reversal: out[k] = v[(-k) mod n] with n = v.size().
template <typename Derived>
Vector<typename Derived::Scalar> flip(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Index n = v.size();
  Vector<Scalar> out(n);
  for (Index k = 0; k < n; ++k) out[k] = v[detail::wrap(-k, n)];
  return out;
}

/// Wrap-around Hankel matrix H_r^n(x). The generator is zero-padded to
/// `period` (default: its own length) before embedding.
template <typename Derived>
Matrix<typename Derived::Scalar> hankel(const Eigen::MatrixBase<Derived>& x, Index r,
                                        Index period = -1) {
  using Scalar = typename Derived::Scalar;
  const Index n = period < 0 ? x.size() : period;
  detail::require(n >= 1 && x.size() <= n, "hankel: generator longer than period");
  detail::require(r >= 1 && r <= n, "hankel: r must satisfy 1 <= r <= n");
  const Vector<Scalar> xp = zero_pad(x, n);
  Matrix<Scalar> H(n, r);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < r; ++j) H(i, j) = xp[detail::wrap(i + j, n)];
  return H;
}

/// Extended Hankel matrix [H_r^n(z_1) ... H_r^n(z_p)] for the columns of Z.
template <typename Derived>
Matrix<typename Derived::Scalar> extended_hankel(const Eigen::MatrixBase<Derived>& Z, Index r) {
  using Scalar = typename Derived::Scalar;
  const Index n = Z.rows();
  const Index p = Z.cols();
  Matrix<Scalar> H(n, r * p);
  for (Index j = 0; j < p; ++j) H.middleCols(j * r, r) = hankel(Z.col(j), r);
  return H;
}

/// Circular convolution; the period follows the longer operand.
template <typename DerivedX, typename DerivedH>
Vector<typename DerivedX::Scalar> circ_conv(const Eigen::MatrixBase<DerivedX>& x,
                                            const Eigen::MatrixBase<DerivedH>& h) {
  const Index n = std::max(x.size(), h.size());
  // x (*) h = H_n^n(x) * flip(h)
  return hankel(x, n, n) * flip(zero_pad(h, n));
}

/// H_r^n(x) * psi, i.e. x convolved with the flipped filter.
template <typename DerivedX, typename DerivedP>
Vector<typename DerivedX::Scalar> correlate(const Eigen::MatrixBase<DerivedX>& x,
                                            const Eigen::MatrixBase<DerivedP>& psi) {
  return hankel(x, psi.size()) * psi;
}

/// Circulant matrix I_m (*) v, whose i-th column is e_i (*) v.
/// Satisfies identity_conv(m, v) * u == circ_conv(u, v).
template <typename Derived>
Matrix<typename Derived::Scalar> identity_conv(Index m, const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  detail::require(v.size() <= m, "identity_conv: filter longer than m");
  const Vector<Scalar> vp = zero_pad(v, m);
  Matrix<Scalar> C(m, m);
  for (Index t = 0; t < m; ++t)
    for (Index i = 0; i < m; ++i) C(t, i) = vp[detail::wrap(t - i, m)];
  return C;
}

/// [phi_1 (*) psi ... phi_m (*) psi] for the columns phi_i of Phi.
template <typename DerivedPhi, typename DerivedPsi>
Matrix<typename DerivedPhi::Scalar> conv_with_frame(const Eigen::MatrixBase<DerivedPhi>& Phi,
                                                    const Eigen::MatrixBase<DerivedPsi>& psi) {
  return identity_conv(Phi.rows(), psi) * Phi;
}

/// Filter bank in matrix form: (taps * in_channels) x out_channels. Row block
/// `a` (taps rows) and column `b` hold the filter linking input channel a to
/// output channel b.
template <typename Scalar>
struct BasicFilterTensor {
  Index taps = 0;
  Matrix<Scalar> psi;

  BasicFilterTensor() = default;
  BasicFilterTensor(Index taps_, Index in_channels, Index out_channels)
      : taps(taps_), psi(Matrix<Scalar>::Zero(taps_ * in_channels, out_channels)) {}
  BasicFilterTensor(Index taps_, Matrix<Scalar> psi_) : taps(taps_), psi(std::move(psi_)) {
    detail::require(taps_ >= 1 && psi.rows() % taps_ == 0,
                    "FilterTensor: row count must be a multiple of the filter length");
  }

  Index in_channels() const { return taps == 0 ? 0 : psi.rows() / taps; }
  Index out_channels() const { return psi.cols(); }

  auto tap(Index a, Index b) { return psi.col(b).segment(a * taps, taps); }
  auto tap(Index a, Index b) const { return psi.col(b).segment(a * taps, taps); }
};

/// MIMO convolution y_i = sum_j z_j (*) flip(psi_{i,j}), evaluated as the
/// extended-Hankel product H_{r|p}^n(Z) * Psi. Columns of Z are the p input channels.
template <typename DerivedZ, typename Scalar>
Matrix<Scalar> mimo_conv(const Eigen::MatrixBase<DerivedZ>& Z,
                         const BasicFilterTensor<Scalar>& Psi) {
  detail::require(Z.cols() == Psi.in_channels(), "mimo_conv: channel count mismatch");
  detail::require(Psi.taps <= Z.rows(), "mimo_conv: filter longer than period");
  return extended_hankel(Z, Psi.taps) * Psi.psi;
}

/// |u^T H_r^n(f) v - <f, u (*) v>| <= tol, with v of length r <= n.
template <typename DerivedF, typename DerivedU, typename DerivedV>
bool hankel_inner_identity_check(const Eigen::MatrixBase<DerivedF>& f,
                                 const Eigen::MatrixBase<DerivedU>& u,
                                 const Eigen::MatrixBase<DerivedV>& v, double tol = 1e-10) {
  detail::require(u.size() == f.size() && v.size() <= f.size(),
                  "hankel_inner_identity_check: incompatible lengths");
  const auto lhs = u.dot(hankel(f, v.size()) * v);
  const auto rhs = f.dot(circ_conv(u, zero_pad(v, f.size())));
  return std::abs(lhs - rhs) <= tol;
}

}  // namespace edcnn
