#include "edcnn/frames.hpp"

#include "edcnn/random.hpp"

#include <cmath>
#include <string>

namespace edcnn {

std::pair<MatrixXd, MatrixXd> make_frame_pooling(Index m_in, Index m_out, double alpha,
                                                 PoolingKind kind, std::uint64_t seed) {
  if (!(alpha > 0.0)) throw PreconditionError("make_frame_pooling: alpha must be > 0");
  if (m_out < m_in) throw PreconditionError("frame pooling requires non-contracting dims");
  if (kind == PoolingKind::identity) {
    if (m_out != m_in) throw PreconditionError("identity pooling requires m_l == m_{l-1}");
    MatrixXd Phi = MatrixXd::Identity(m_in, m_in);
    return {Phi, alpha * Phi};
  }
  Rng rng(derive_seed(seed, "frame_pooling"));
  const MatrixXd Q = random_orthogonal(m_out, rng);
  MatrixXd Phi = Q.topRows(m_in);
  MatrixXd Phit = alpha * Phi;
  return {std::move(Phi), std::move(Phit)};
}

std::pair<FilterTensor, FilterTensor> make_frame_filters(Index r, Index q_in, Index q_out,
                                                         double alpha, FrameMode mode,
                                                         std::uint64_t seed) {
  if (!(alpha > 0.0)) throw PreconditionError("make_frame_filters: alpha must be > 0");
  if (q_out < r * q_in)
    throw PreconditionError("frame filters require q_out >= r * q_in (" + std::to_string(q_out) +
                            " < " + std::to_string(r * q_in) + ")");
  Rng rng(derive_seed(seed, "frame_filters"));
  const MatrixXd Q = random_orthogonal(q_out, rng);
  const double c = filter_frame_constant(r, alpha, mode);
  MatrixXd psi = std::sqrt(c) * Q.topRows(r * q_in);
  return {FilterTensor(r, psi), FilterTensor(r, psi)};
}

LayerBank make_frame_bank(const NetworkSpec& spec, const FrameConfig& config) {
  config.validate();
  spec.validate_frame_mode();
  LayerBank bank;
  for (int l = 1; l <= spec.kappa; ++l) {
    const std::uint64_t layer_seed = derive_seed(config.seed, static_cast<std::uint64_t>(l));
    auto [Phi, Phit] =
        make_frame_pooling(spec.m[l - 1], spec.m[l], config.alpha, config.pooling, layer_seed);
    auto [Psi, Psit] =
        make_frame_filters(spec.r, spec.q[l - 1], spec.q[l], config.alpha, config.mode, layer_seed);
    bank.layers.push_back({std::move(Psi), std::move(Psit), std::move(Phi), std::move(Phit)});
  }
  return bank;
}

namespace {

double max_abs(const MatrixXd& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

}  // namespace

std::vector<LayerResidual> frame_residual(const NetworkSpec& spec, const LayerBank& bank,
                                          double alpha, FrameMode mode) {
  spec.validate();
  bank.validate(spec);
  const double c = filter_frame_constant(spec.r, alpha, mode);
  std::vector<LayerResidual> out;
  for (int l = 1; l <= spec.kappa; ++l) {
    const auto& L = bank.layer(l);
    LayerResidual res;
    res.layer = l;
    const Index m_in = spec.m[l - 1];
    res.pooling_residual =
        max_abs(L.unpool * L.pool.transpose() - alpha * MatrixXd::Identity(m_in, m_in));
    const Index rows = L.enc.psi.rows();
    res.filter_residual =
        max_abs(L.enc.psi * L.dec.psi.transpose() - c * MatrixXd::Identity(rows, rows));

    NetworkSpec layer_spec = spec;
    layer_spec.skip = (mode == FrameMode::skip);
    const LayerMatrices mats = build_layer_matrices(layer_spec, bank, l);
    const Index d = spec.d(l - 1);
    const MatrixXd I = MatrixXd::Identity(d, d);
    const MatrixXd pooled = mats.D * mats.E.transpose();
    if (mode == FrameMode::skip) {
      const MatrixXd skipped = *mats.S_tilde * mats.S->transpose();
      res.layer_identity_residual = max_abs(pooled + skipped - I);
      res.pooled_term_residual = max_abs(pooled - (alpha / (alpha + 1.0)) * I);
      res.skip_term_residual = max_abs(skipped - (1.0 / (alpha + 1.0)) * I);
    } else {
      res.layer_identity_residual = max_abs(pooled - I);
    }
    out.push_back(res);
  }
  return out;
}

FrameBasis build_frame_basis(const Network& net) {
  const auto& spec = net.spec;
  const int K = spec.kappa;
  const Index d0 = spec.d(0);
  FrameBasis basis;
  basis.B.resize(d0, spec.feature_dim());
  basis.B_tilde.resize(d0, spec.feature_dim());

  // prefix[l] = E^1...E^l, prefix_tilde[l] = D^1...D^l
  std::vector<MatrixXd> prefix{MatrixXd::Identity(d0, d0)};
  std::vector<MatrixXd> prefix_tilde{MatrixXd::Identity(d0, d0)};
  for (int l = 1; l <= K; ++l) {
    prefix.push_back(prefix.back() * net.layer(l).E);
    prefix_tilde.push_back(prefix_tilde.back() * net.layer(l).D);
  }
  Index col = 0;
  basis.B.middleCols(col, spec.d(K)) = prefix[K];
  basis.B_tilde.middleCols(col, spec.d(K)) = prefix_tilde[K];
  col += spec.d(K);
  if (spec.skip) {
    for (int l = K; l >= 1; --l) {
      const Index s = spec.s(l);
      basis.B.middleCols(col, s) = prefix[l - 1] * *net.layer(l).S;
      basis.B_tilde.middleCols(col, s) = prefix_tilde[l - 1] * *net.layer(l).S_tilde;
      col += s;
    }
  }
  return basis;
}

FrameBasis build_frame_basis(const NetworkSpec& spec, const LayerBank& bank) {
  return build_frame_basis(build_network(spec, bank));
}

std::vector<std::vector<VectorXd>> cascaded_filters(const NetworkSpec& spec, const LayerBank& bank,
                                                    int l, bool decoder) {
  const Index m = spec.m[0];
  const Index q0 = spec.q[0];
  auto filters = [&](int layer) -> const FilterTensor& {
    return decoder ? bank.layer(layer).dec : bank.layer(layer).enc;
  };
  std::vector<std::vector<VectorXd>> current(q0);
  for (Index s = 0; s < q0; ++s)
    for (Index t = 0; t < spec.q[1]; ++t) current[s].push_back(zero_pad(filters(1).tap(s, t), m));
  for (int k = 2; k <= l; ++k) {
    std::vector<std::vector<VectorXd>> next(q0);
    for (Index s = 0; s < q0; ++s) {
      for (Index t = 0; t < spec.q[k]; ++t) {
        VectorXd acc = VectorXd::Zero(m);
        for (Index j = 0; j < spec.q[k - 1]; ++j)
          acc += circ_conv(current[s][j], zero_pad(filters(k).tap(j, t), m));
        next[s].push_back(std::move(acc));
      }
    }
    current = std::move(next);
  }
  return current;
}

CascadeReport cascade_filter_check(const NetworkSpec& spec, const LayerBank& bank) {
  spec.validate();
  bank.validate(spec);
  const Index m = spec.m[0];
  for (int l = 1; l <= spec.kappa; ++l) {
    const auto& L = bank.layer(l);
    const bool identity_pool = spec.m[l] == m && L.pool.isIdentity(0.0) && L.unpool.isIdentity(0.0);
    if (!identity_pool) throw PreconditionError("corollary requires no pooling");
  }
  NetworkSpec skip_spec = spec;
  skip_spec.skip = true;
  const Network net = build_network(skip_spec, bank);

  CascadeReport report;
  MatrixXd prefix = MatrixXd::Identity(spec.d(0), spec.d(0));
  MatrixXd prefix_tilde = prefix;
  for (int l = 1; l <= spec.kappa; ++l) {
    const MatrixXd enc_product = prefix * net.layer(l).E;
    const MatrixXd skip_product = prefix * *net.layer(l).S;
    const MatrixXd dec_product = prefix_tilde * net.layer(l).D;
    const MatrixXd skip_dec_product = prefix_tilde * *net.layer(l).S_tilde;

    const auto enc_filters = cascaded_filters(spec, bank, l, false);
    const auto dec_filters = cascaded_filters(spec, bank, l, true);
    CascadeLayerReport row;
    row.layer = l;
    for (Index s = 0; s < spec.q[0]; ++s) {
      for (Index t = 0; t < spec.q[l]; ++t) {
        const MatrixXd expect_enc = identity_conv(m, enc_filters[s][t]);
        const MatrixXd expect_dec = identity_conv(m, dec_filters[s][t]);
        auto blk = [&](const MatrixXd& A) { return A.block(s * m, t * m, m, m); };
        row.encoder_deviation = std::max(row.encoder_deviation, max_abs(blk(enc_product) - expect_enc));
        row.skip_deviation = std::max(row.skip_deviation, max_abs(blk(skip_product) - expect_enc));
        row.decoder_deviation = std::max(row.decoder_deviation, max_abs(blk(dec_product) - expect_dec));
        row.skip_decoder_deviation =
            std::max(row.skip_decoder_deviation, max_abs(blk(skip_dec_product) - expect_dec));
      }
    }
    report.max_deviation =
        std::max({report.max_deviation, row.encoder_deviation, row.skip_deviation,
                  row.decoder_deviation, row.skip_decoder_deviation});
    report.layers.push_back(row);
    prefix = enc_product;
    prefix_tilde = dec_product;
  }
  return report;
}

Json to_json(const LayerResidual& r, FrameMode mode) {
  Json out;
  out["layer"] = r.layer;
  out["pooling_residual"] = r.pooling_residual;
  out["filter_residual"] = r.filter_residual;
  out["layer_identity_residual"] = r.layer_identity_residual;
  if (mode == FrameMode::skip) {
    out["pooled_term_residual"] = r.pooled_term_residual;
    out["skip_term_residual"] = r.skip_term_residual;
  }
  return out;
}

Json to_json(const CascadeReport& r) {
  Json layers = Json::array();
  for (const auto& row : r.layers) {
    Json j;
    j["layer"] = row.layer;
    j["E_product_deviation"] = row.encoder_deviation;
    j["S_product_deviation"] = row.skip_deviation;
    j["D_product_deviation"] = row.decoder_deviation;
    j["S_tilde_product_deviation"] = row.skip_decoder_deviation;
    layers.push_back(std::move(j));
  }
  Json out;
  out["layers"] = std::move(layers);
  out["max_deviation"] = r.max_deviation;
  return out;
}

}  // namespace edcnn
