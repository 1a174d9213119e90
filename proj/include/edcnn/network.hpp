#pragma once

// Encoder-decoder CNN realized as dense layer operators.
//
// Features are stacked channel-major: xi = [xi_1; ...; xi_q], each channel of
// length m. Layer l (1-based, l in [1, kappa]) maps d_{l-1} = m_{l-1} q_{l-1}
// inputs to d_l = m_l q_l features through
//   encoder   xi^l        = sigma(E^l^T xi^{l-1})
//   skip      chi^l       = sigma(S^l^T xi^{l-1})                 (s_l = m_{l-1} q_l)
//   decoder   xit^{l-1}   = sigma(D^l xit^l + St^l chi^l),  xit^kappa = xi^kappa
// with block (a, b) of E^l equal to Phi^l (*) psi^l_{b,a}, block (a, b) of D^l
// equal to Phit^l (*) psit^l_{a,b}, and S^l, St^l the same with identity pooling.
// No bias terms: the network is positively homogeneous.

#include "edcnn/convops.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace edcnn {

enum class Nonlinearity { none, relu };

inline const char* to_string(Nonlinearity n) { return n == Nonlinearity::relu ? "relu" : "none"; }

struct NetworkSpec {
  int kappa = 1;
  int r = 1;
  std::vector<Index> q;  // q_0 .. q_kappa
  std::vector<Index> m;  // m_0 .. m_kappa
  bool skip = false;
  Nonlinearity nonlinearity = Nonlinearity::relu;

  Index d(int l) const { return m.at(l) * q.at(l); }
  /// Skip-branch width of layer l in [1, kappa].
  Index s(int l) const { return m.at(l - 1) * q.at(l); }

  /// Free filter coefficients per layer and side, r q_l q_{l-1}.
  Index filter_parameters(int l) const { return r * q.at(l) * q.at(l - 1); }

  /// Feature width of the frame representation: d_kappa (+ sum_l s_l with skips).
  Index feature_dim() const {
    Index total = d(kappa);
    if (skip)
      for (int l = 1; l <= kappa; ++l) total += s(l);
    return total;
  }

  void validate() const {
    if (kappa < 1) throw DimensionError("NetworkSpec: kappa must be >= 1");
    if (r < 1) throw DimensionError("NetworkSpec: r must be >= 1");
    if (q.size() != static_cast<std::size_t>(kappa) + 1 ||
        m.size() != static_cast<std::size_t>(kappa) + 1)
      throw DimensionError("NetworkSpec: q and m need kappa + 1 entries");
    for (int l = 0; l <= kappa; ++l) {
      if (q[l] < 1 || m[l] < 1)
        throw DimensionError("NetworkSpec: d_" + std::to_string(l) + " must be >= 1");
      if (r > m[l])
        throw DimensionError("NetworkSpec: r = " + std::to_string(r) + " exceeds m_" +
                             std::to_string(l) + " = " + std::to_string(m[l]));
    }
  }

  /// Channel growth q_l >= r q_{l-1} needed by frame-satisfying filter banks.
  void validate_frame_mode() const {
    validate();
    for (int l = 1; l <= kappa; ++l)
      if (q[l] < r * q[l - 1])
        throw PreconditionError("frame construction needs q_" + std::to_string(l) +
                                " >= r * q_" + std::to_string(l - 1) + " (" +
                                std::to_string(q[l]) + " < " + std::to_string(r * q[l - 1]) +
                                ")");
  }
};

/// Learnable content of one layer: filters (q_{l-1} x q_l x r) and pooling
/// matrices (m_{l-1} x m_l).
template <typename Scalar>
struct BasicLayerFilters {
  BasicFilterTensor<Scalar> enc;  // enc.tap(a, b) = psi_{b,a}
  BasicFilterTensor<Scalar> dec;  // dec.tap(a, b) = psit_{a,b}
  Matrix<Scalar> pool;            // Phi
  Matrix<Scalar> unpool;          // Phit
};

template <typename Scalar>
struct BasicLayerBank {
  std::vector<BasicLayerFilters<Scalar>> layers;  // layers[l - 1]

  const BasicLayerFilters<Scalar>& layer(int l) const { return layers.at(l - 1); }
  BasicLayerFilters<Scalar>& layer(int l) { return layers.at(l - 1); }

  void validate(const NetworkSpec& spec) const {
    if (layers.size() != static_cast<std::size_t>(spec.kappa))
      throw DimensionError("LayerBank: expected " + std::to_string(spec.kappa) + " layers, got " +
                           std::to_string(layers.size()));
    for (int l = 1; l <= spec.kappa; ++l) {
      const auto& L = layer(l);
      const std::string where = "LayerBank layer " + std::to_string(l) + ": ";
      for (const auto* f : {&L.enc, &L.dec}) {
        if (f->taps != spec.r || f->in_channels() != spec.q[l - 1] ||
            f->out_channels() != spec.q[l])
          throw DimensionError(where + "filter tensor shape does not match spec");
      }
      for (const auto* P : {&L.pool, &L.unpool}) {
        if (P->rows() != spec.m[l - 1] || P->cols() != spec.m[l])
          throw DimensionError(where + "pooling matrix must be m_{l-1} x m_l");
      }
    }
  }
};

template <typename Scalar>
struct BasicLayerMatrices {
  Matrix<Scalar> E;                        // d_{l-1} x d_l
  Matrix<Scalar> D;                        // d_{l-1} x d_l
  std::optional<Matrix<Scalar>> S;         // d_{l-1} x s_l
  std::optional<Matrix<Scalar>> S_tilde;   // d_{l-1} x s_l
};

/// Dense operators of layer l in [1, kappa].
template <typename Scalar>
BasicLayerMatrices<Scalar> build_layer_matrices(const NetworkSpec& spec,
                                                const BasicLayerBank<Scalar>& bank, int l) {
  if (l < 1 || l > spec.kappa) throw DimensionError("build_layer_matrices: layer out of range");
  bank.validate(spec);
  const auto& L = bank.layer(l);
  const Index q_in = spec.q[l - 1];
  const Index q_out = spec.q[l];
  const Index m_in = spec.m[l - 1];
  const Index m_out = spec.m[l];

  BasicLayerMatrices<Scalar> out;
  out.E.resize(m_in * q_in, m_out * q_out);
  out.D.resize(m_in * q_in, m_out * q_out);
  for (Index a = 0; a < q_in; ++a) {
    for (Index b = 0; b < q_out; ++b) {
      out.E.block(a * m_in, b * m_out, m_in, m_out) = conv_with_frame(L.pool, L.enc.tap(a, b));
      out.D.block(a * m_in, b * m_out, m_in, m_out) = conv_with_frame(L.unpool, L.dec.tap(a, b));
    }
  }
  if (spec.skip) {
    Matrix<Scalar> S(m_in * q_in, m_in * q_out);
    Matrix<Scalar> St(m_in * q_in, m_in * q_out);
    for (Index a = 0; a < q_in; ++a) {
      for (Index b = 0; b < q_out; ++b) {
        S.block(a * m_in, b * m_in, m_in, m_in) = identity_conv(m_in, L.enc.tap(a, b));
        St.block(a * m_in, b * m_in, m_in, m_in) = identity_conv(m_in, L.dec.tap(a, b));
      }
    }
    out.S = std::move(S);
    out.S_tilde = std::move(St);
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> activate(const Vector<Scalar>& pre, Nonlinearity n) {
  return n == Nonlinearity::relu ? Vector<Scalar>(pre.cwiseMax(Scalar(0))) : pre;
}

template <typename Scalar>
struct EncoderStep {
  Vector<Scalar> xi;
  std::optional<Vector<Scalar>> chi;
  Vector<Scalar> pre;
  std::optional<Vector<Scalar>> skip_pre;
};

template <typename Scalar>
EncoderStep<Scalar> encoder_step(const Vector<Scalar>& x, const BasicLayerMatrices<Scalar>& mats,
                                 Nonlinearity nonlinearity) {
  detail::require(x.size() == mats.E.rows(), "encoder_step: input length must be d_{l-1}");
  EncoderStep<Scalar> out;
  out.pre = mats.E.transpose() * x;
  out.xi = activate(out.pre, nonlinearity);
  if (mats.S) {
    out.skip_pre = Vector<Scalar>(mats.S->transpose() * x);
    out.chi = activate(*out.skip_pre, nonlinearity);
  }
  return out;
}

template <typename Scalar>
struct DecoderStep {
  Vector<Scalar> out;
  Vector<Scalar> pre;
};

template <typename Scalar>
DecoderStep<Scalar> decoder_step(const Vector<Scalar>& xi_tilde, const Vector<Scalar>* chi,
                                 const BasicLayerMatrices<Scalar>& mats,
                                 Nonlinearity nonlinearity) {
  detail::require(xi_tilde.size() == mats.D.cols(), "decoder_step: input length must be d_l");
  DecoderStep<Scalar> step;
  step.pre = mats.D * xi_tilde;
  if (chi != nullptr && mats.S_tilde) {
    detail::require(chi->size() == mats.S_tilde->cols(), "decoder_step: skip length must be s_l");
    step.pre += *mats.S_tilde * *chi;
  }
  step.out = activate(step.pre, nonlinearity);
  return step;
}

/// Every intermediate of one forward pass. Encoder-side vectors are indexed by
/// layer (xi[0] is the input); per-layer quantities use index l - 1.
template <typename Scalar>
struct BasicForwardTrace {
  std::vector<Vector<Scalar>> xi;        // xi^0 .. xi^kappa
  std::vector<Vector<Scalar>> chi;       // chi^1 .. chi^kappa (skip only)
  std::vector<Vector<Scalar>> xi_tilde;  // xit^0 .. xit^kappa
  std::vector<Vector<Scalar>> enc_pre;   // E^l^T xi^{l-1}
  std::vector<Vector<Scalar>> skip_pre;  // S^l^T xi^{l-1} (skip only)
  std::vector<Vector<Scalar>> dec_pre;   // D^l xit^l + St^l chi^l

  const Vector<Scalar>& output() const { return xi_tilde.front(); }
};

/// Network with materialized operators. Matrices may be edited in place to
/// probe the network as a function of unstructured layer matrices.
template <typename Scalar>
struct BasicNetwork {
  NetworkSpec spec;
  std::vector<BasicLayerMatrices<Scalar>> layers;  // layers[l - 1]

  const BasicLayerMatrices<Scalar>& layer(int l) const { return layers.at(l - 1); }
  BasicLayerMatrices<Scalar>& layer(int l) { return layers.at(l - 1); }
};

template <typename Scalar>
BasicNetwork<Scalar> build_network(const NetworkSpec& spec, const BasicLayerBank<Scalar>& bank) {
  spec.validate();
  bank.validate(spec);
  BasicNetwork<Scalar> net{spec, {}};
  for (int l = 1; l <= spec.kappa; ++l) net.layers.push_back(build_layer_matrices(spec, bank, l));
  return net;
}

template <typename Scalar>
BasicForwardTrace<Scalar> forward(const BasicNetwork<Scalar>& net, const Vector<Scalar>& x) {
  const auto& spec = net.spec;
  const int K = spec.kappa;
  detail::require(x.size() == spec.d(0), "forward: input length must be d_0");
  BasicForwardTrace<Scalar> tr;
  tr.xi.reserve(K + 1);
  tr.xi.push_back(x);
  for (int l = 1; l <= K; ++l) {
    auto step = encoder_step(tr.xi.back(), net.layer(l), spec.nonlinearity);
    tr.enc_pre.push_back(std::move(step.pre));
    tr.xi.push_back(std::move(step.xi));
    if (step.chi) {
      tr.skip_pre.push_back(std::move(*step.skip_pre));
      tr.chi.push_back(std::move(*step.chi));
    }
  }
  tr.xi_tilde.assign(K + 1, Vector<Scalar>());
  tr.dec_pre.assign(K, Vector<Scalar>());
  tr.xi_tilde[K] = tr.xi[K];
  for (int l = K; l >= 1; --l) {
    const Vector<Scalar>* chi = spec.skip ? &tr.chi[l - 1] : nullptr;
    auto step = decoder_step(tr.xi_tilde[l], chi, net.layer(l), spec.nonlinearity);
    tr.dec_pre[l - 1] = std::move(step.pre);
    tr.xi_tilde[l - 1] = std::move(step.out);
  }
  return tr;
}

template <typename Scalar>
BasicForwardTrace<Scalar> forward(const NetworkSpec& spec, const BasicLayerBank<Scalar>& bank,
                                  const Vector<Scalar>& x) {
  return forward(build_network(spec, bank), x);
}

/// Smallest |pre-activation| over the encoder, skip and decoder ReLUs of a
/// trace. Levels whose whole input is an exactly-zero ReLU output are skipped:
/// they stay at 0 under any small change of the input or of any layer matrix.
template <typename Scalar>
Scalar kink_margin(const BasicForwardTrace<Scalar>& tr) {
  Scalar best = std::numeric_limits<Scalar>::infinity();
  auto visit = [&best](const Vector<Scalar>& pre, bool dead_input) {
    if (pre.size() > 0 && !dead_input) best = std::min(best, pre.cwiseAbs().minCoeff());
  };
  auto dead = [](const Vector<Scalar>& v) { return v.size() == 0 || v.isZero(0); };
  for (std::size_t l = 0; l < tr.enc_pre.size(); ++l) {
    const bool in_dead = l > 0 && dead(tr.xi[l]);
    visit(tr.enc_pre[l], in_dead);
    if (l < tr.skip_pre.size()) visit(tr.skip_pre[l], in_dead);
  }
  for (std::size_t l = 0; l < tr.dec_pre.size(); ++l)
    visit(tr.dec_pre[l], dead(tr.xi_tilde[l + 1]) && (l >= tr.chi.size() || dead(tr.chi[l])));
  return best;
}

/// Margin for perturbations of the input only, with the layer matrices held
/// fixed. Units whose every incoming term is exactly zero are skipped: their
/// inputs come from ReLUs that are off with a margin, so they stay at 0.
template <typename Scalar>
Scalar kink_margin(const BasicNetwork<Scalar>& net, const BasicForwardTrace<Scalar>& tr) {
  Scalar best = std::numeric_limits<Scalar>::infinity();
  auto visit = [&best](const Vector<Scalar>& pre, const Vector<Scalar>& support) {
    for (Index i = 0; i < pre.size(); ++i)
      if (support[i] != Scalar(0)) best = std::min(best, std::abs(pre[i]));
  };
  for (int l = 1; l <= net.spec.kappa; ++l) {
    const auto& L = net.layer(l);
    const Vector<Scalar> in = tr.xi[l - 1].cwiseAbs();
    // The raw input is never exempt.
    auto support = [&](const Matrix<Scalar>& W) -> Vector<Scalar> {
      if (l == 1) return Vector<Scalar>::Ones(W.cols());
      return W.cwiseAbs().transpose() * in;
    };
    visit(tr.enc_pre[l - 1], support(L.E));
    if (L.S && !tr.skip_pre.empty()) visit(tr.skip_pre[l - 1], support(*L.S));
    Vector<Scalar> dec = L.D.cwiseAbs() * tr.xi_tilde[l].cwiseAbs();
    if (L.S_tilde && !tr.chi.empty()) dec += L.S_tilde->cwiseAbs() * tr.chi[l - 1].cwiseAbs();
    visit(tr.dec_pre[l - 1], dec);
  }
  return best;
}

struct EmbeddingDiagnostic {
  int layer = 0;
  std::string message;
};

/// Warnings for d_0 <= d_1 <= ... <= d_kappa and d_kappa > 2 d_0. Never throws
/// on a violated inequality.
inline std::vector<EmbeddingDiagnostic> check_embedding_dims(const NetworkSpec& spec) {
  std::vector<EmbeddingDiagnostic> out;
  const int K = spec.kappa;
  for (int l = 1; l <= K; ++l) {
    if (spec.d(l - 1) > spec.d(l))
      out.push_back({l, "monotonicity d_" + std::to_string(l - 1) + " <= d_" + std::to_string(l) +
                            " violated at l=" + std::to_string(l) + ": " +
                            std::to_string(spec.d(l - 1)) + " > " + std::to_string(spec.d(l))});
  }
  if (spec.d(K) <= 2 * spec.d(0))
    out.push_back({K, "d_kappa > 2*d_0 violated: d_kappa <= 2*d_0, " + std::to_string(spec.d(K)) +
                          " <= " + std::to_string(2 * spec.d(0))});
  return out;
}

using FilterTensor = BasicFilterTensor<double>;
using LayerFilters = BasicLayerFilters<double>;
using LayerBank = BasicLayerBank<double>;
using LayerMatrices = BasicLayerMatrices<double>;
using ForwardTrace = BasicForwardTrace<double>;
using Network = BasicNetwork<double>;

}  // namespace edcnn
