#pragma once

// Frame-condition banks, frame bases and reconstruction checks.
//
// Without skips a layer reconstructs its input (D^l E^l^T = I) when
//   Phit^l Phi^l^T = alpha I   and   Psi^l Psit^l^T = 1 / (r alpha) I.
// With skips the filter constant becomes 1 / (r (alpha + 1)) and the layer
// identity reads D^l E^l^T + St^l S^l^T = I.

#include "edcnn/bank_io.hpp"
#include "edcnn/network.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace edcnn {

enum class FrameMode { no_skip, skip };
enum class PoolingKind { identity, orthogonal };

inline const char* to_string(FrameMode m) { return m == FrameMode::skip ? "skip" : "no_skip"; }
inline const char* to_string(PoolingKind k) {
  return k == PoolingKind::orthogonal ? "orthogonal" : "identity";
}

struct FrameConfig {
  double alpha = 1.0;
  FrameMode mode = FrameMode::no_skip;
  PoolingKind pooling = PoolingKind::identity;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0)) throw PreconditionError("FrameConfig: alpha must be > 0");
  }
};

/// Filter frame constant c with Psi Psit^T = c I.
inline double filter_frame_constant(Index r, double alpha, FrameMode mode) {
  return mode == FrameMode::skip ? 1.0 / (static_cast<double>(r) * (alpha + 1.0))
                                 : 1.0 / (static_cast<double>(r) * alpha);
}

/// (Phi, Phit) with Phit Phi^T = alpha I_{m_in}; Phi is m_in x m_out.
/// Orthogonal pooling keeps m_in orthonormal rows of a seeded m_out x m_out
/// orthogonal matrix. Throws PreconditionError when m_out < m_in.
std::pair<MatrixXd, MatrixXd> make_frame_pooling(Index m_in, Index m_out, double alpha,
                                                 PoolingKind kind, std::uint64_t seed = 0);

/// Symmetric tight-frame filters Psi = Psit = sqrt(c) * (r q_in orthonormal
/// rows of a seeded q_out x q_out orthogonal matrix).
std::pair<FilterTensor, FilterTensor> make_frame_filters(Index r, Index q_in, Index q_out,
                                                         double alpha, FrameMode mode,
                                                         std::uint64_t seed = 0);

/// Full bank satisfying the frame conditions for every layer of `spec`.
LayerBank make_frame_bank(const NetworkSpec& spec, const FrameConfig& config);

struct LayerResidual {
  int layer = 0;
  double pooling_residual = 0.0;         // |Phit Phi^T - alpha I|_max
  double filter_residual = 0.0;          // |Psi Psit^T - c I|_max
  double layer_identity_residual = 0.0;  // |D E^T (+ St S^T) - I|_max
  // Skip mode only: the two halves of the layer identity, against
  // alpha/(alpha+1) I and 1/(alpha+1) I respectively.
  double pooled_term_residual = 0.0;
  double skip_term_residual = 0.0;
};

/// Per-layer diagnostics; never throws on a bank that misses the conditions.
std::vector<LayerResidual> frame_residual(const NetworkSpec& spec, const LayerBank& bank,
                                          double alpha, FrameMode mode);

struct FrameBasis {
  MatrixXd B;        // d_0 x feature_dim
  MatrixXd B_tilde;  // d_0 x feature_dim
};

/// B = E^1...E^kappa, Bt = D^1...D^kappa, or with skips
/// [E^1..E^k | E^1..E^{k-1} S^k | ... | E^1 S^2 | S^1] and the matching dual.
/// The nonlinearity of `spec` is ignored.
FrameBasis build_frame_basis(const NetworkSpec& spec, const LayerBank& bank);
FrameBasis build_frame_basis(const Network& net);

struct CascadeLayerReport {
  int layer = 0;
  double encoder_deviation = 0.0;  // E^1...E^l
  double skip_deviation = 0.0;     // E^1...E^{l-1} S^l
  double decoder_deviation = 0.0;  // D^1...D^l
  double skip_decoder_deviation = 0.0;  // D^1...D^{l-1} St^l
};

struct CascadeReport {
  std::vector<CascadeLayerReport> layers;
  double max_deviation = 0.0;
};

/// Cascaded filter of the operator product E^1...E^l, block (s, t):
///   sum_{j_1..j_{l-1}} psi^1_{j_1,s} (*) psi^2_{j_2,j_1} (*) ... (*) psi^l_{t,j_{l-1}}
/// at period m. `decoder` selects the decoder filters instead.
std::vector<std::vector<VectorXd>> cascaded_filters(const NetworkSpec& spec, const LayerBank& bank,
                                                    int l, bool decoder);

/// Compares every (s, t) block of the operator products against
/// identity_conv(m, cascaded filter). Requires identity pooling with constant m
/// (PreconditionError "corollary requires no pooling" otherwise).
CascadeReport cascade_filter_check(const NetworkSpec& spec, const LayerBank& bank);

Json to_json(const LayerResidual& r, FrameMode mode);
Json to_json(const CascadeReport& r);

}  // namespace edcnn
