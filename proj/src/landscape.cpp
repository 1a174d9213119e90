#include "edcnn/landscape.hpp"

#include "edcnn/random.hpp"
#include "edcnn/spectral.hpp"

#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace edcnn {

namespace {

VectorXd mask_vector(const VectorXd& pre, Nonlinearity nl) {
  if (nl == Nonlinearity::none) return VectorXd::Ones(pre.size());
  return (pre.array() > 0.0).cast<double>().matrix();
}

std::vector<ForwardTrace> traces_of(const Network& net, const TrainingSet& data) {
  std::vector<ForwardTrace> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) out.push_back(forward(net, VectorXd(data.X.col(i))));
  return out;
}

double loss_of(const std::vector<ForwardTrace>& traces, const TrainingSet& data) {
  double total = 0.0;
  for (Index i = 0; i < data.size(); ++i)
    total += (traces[static_cast<std::size_t>(i)].output() - data.Y.col(i)).squaredNorm();
  return 0.5 * total;
}

void check_margin(const Network& net, const std::vector<ForwardTrace>& traces, double margin,
                  const char* who) {
  if (net.spec.nonlinearity != Nonlinearity::relu || margin <= 0.0) return;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double observed = kink_margin(traces[i]);
    if (observed < margin)
      throw KinkMarginError(std::string(who) + ": sample " + std::to_string(i) + " lies within " +
                            std::to_string(observed) + " of a ReLU kink; perturb the data");
  }
}

// Per-sample factor Lt^l Upst^{l-1}^T (d_{l-1} x d_0).
MatrixXd skip_factor(const Network& net, const ActivationPattern& p, int l) {
  const UpsilonChain c = upsilon_chain(net, p);
  const VectorXd mask = p.dec[l - 1].cast<double>().matrix();
  return mask.asDiagonal() * c.upsilon_tilde[l - 1].transpose();
}

// Per-sample factor Lambda^kappa Upst^kappa^T (d_kappa x d_0).
MatrixXd enc_factor(const Network& net, const ActivationPattern& p) {
  const int K = net.spec.kappa;
  const UpsilonChain c = upsilon_chain(net, p);
  const VectorXd mask = p.enc[K - 1].cast<double>().matrix();
  return mask.asDiagonal() * c.upsilon_tilde[K].transpose();
}

// vec(G) = (F kron I) blkdiag(A_i) R, reshaped to rows x F.rows().
MatrixXd kronecker_gradient(const MatrixXd& features, const std::vector<MatrixXd>& factors,
                            const MatrixXd& residuals) {
  const Index T = features.cols();
  const Index rows = factors.front().rows();
  const Index d0 = residuals.rows();
  MatrixXd blk = MatrixXd::Zero(rows * T, d0 * T);
  for (Index i = 0; i < T; ++i) blk.block(i * rows, i * d0, rows, d0) = factors[i];
  const VectorXd R = Eigen::Map<const VectorXd>(residuals.data(), residuals.size());
  const MatrixXd K = Eigen::kroneckerProduct(features, MatrixXd::Identity(rows, rows)).eval();
  const VectorXd g = K * (blk * R);
  return Eigen::Map<const MatrixXd>(g.data(), rows, features.rows());
}

MatrixXd residual_matrix(const std::vector<ForwardTrace>& traces, const TrainingSet& data) {
  MatrixXd R(data.Y.rows(), data.size());
  for (Index i = 0; i < data.size(); ++i)
    R.col(i) = traces[static_cast<std::size_t>(i)].output() - data.Y.col(i);
  return R;
}

bool sandwich_holds(double lower, double value, double upper) {
  const bool lo = lower <= value + kBoundSlack * std::max(1.0, value);
  const bool hi = value <= upper + kBoundSlack * std::max(1.0, upper);
  return lo && hi;
}

void fill_factor_stats(BoundCertificate& c, const std::vector<MatrixXd>& factors) {
  c.factor_sigma_min = std::numeric_limits<double>::infinity();
  c.factor_sigma_max = 0.0;
  for (const auto& A : factors) {
    const double lo = sigma_min(A);
    const double hi = sigma_max(A);
    c.sample_sigma_min.push_back(lo);
    c.sample_sigma_max.push_back(hi);
    c.factor_sigma_min = std::min(c.factor_sigma_min, lo);
    c.factor_sigma_max = std::max(c.factor_sigma_max, hi);
  }
  if (factors.empty()) c.factor_sigma_min = 0.0;
}

}  // namespace

void TrainingSet::validate(const NetworkSpec& spec) const {
  if (X.rows() != spec.d(0) || Y.rows() != spec.d(0))
    throw DimensionError("TrainingSet: inputs and targets need d_0 = " + std::to_string(spec.d(0)) +
                         " rows");
  if (X.cols() != Y.cols()) throw DimensionError("TrainingSet: X and Y sample counts differ");
  if (X.cols() < 1) throw DimensionError("TrainingSet: at least one sample is required");
}

double loss(const Network& net, const TrainingSet& data) {
  data.validate(net.spec);
  return loss_of(traces_of(net, data), data);
}

FeatureMatrices feature_matrices(const Network& net, const TrainingSet& data) {
  data.validate(net.spec);
  const auto& spec = net.spec;
  const int K = spec.kappa;
  const Index T = data.size();
  FeatureMatrices f;
  for (int l = 0; l <= K; ++l) f.xi.emplace_back(spec.d(l), T);
  if (spec.skip)
    for (int l = 1; l <= K; ++l) f.gamma.emplace_back(spec.s(l), T);
  for (Index i = 0; i < T; ++i) {
    const ForwardTrace tr = forward(net, VectorXd(data.X.col(i)));
    for (int l = 0; l <= K; ++l) f.xi[l].col(i) = tr.xi[l];
    if (spec.skip)
      for (int l = 1; l <= K; ++l) f.gamma[l - 1].col(i) = tr.chi[l - 1];
  }
  return f;
}

MatrixGradients matrix_gradients(const Network& net, const TrainingSet& data) {
  data.validate(net.spec);
  const auto& spec = net.spec;
  const int K = spec.kappa;
  const auto nl = spec.nonlinearity;
  MatrixGradients g;
  for (int l = 1; l <= K; ++l) {
    g.E.push_back(MatrixXd::Zero(spec.d(l - 1), spec.d(l)));
    g.D.push_back(MatrixXd::Zero(spec.d(l - 1), spec.d(l)));
    if (spec.skip) {
      g.S.push_back(MatrixXd::Zero(spec.d(l - 1), spec.s(l)));
      g.S_tilde.push_back(MatrixXd::Zero(spec.d(l - 1), spec.s(l)));
    }
  }
  for (Index i = 0; i < data.size(); ++i) {
    const ForwardTrace tr = forward(net, VectorXd(data.X.col(i)));
    VectorXd upstream = tr.output() - data.Y.col(i);
    std::vector<VectorXd> g_chi(static_cast<std::size_t>(K));
    for (int l = 1; l <= K; ++l) {
      const auto& L = net.layer(l);
      const VectorXd delta = upstream.cwiseProduct(mask_vector(tr.dec_pre[l - 1], nl));
      g.D[l - 1].noalias() += delta * tr.xi_tilde[l].transpose();
      if (spec.skip) {
        g.S_tilde[l - 1].noalias() += delta * tr.chi[l - 1].transpose();
        g_chi[l - 1] = L.S_tilde->transpose() * delta;
      }
      upstream = L.D.transpose() * delta;
    }
    // xit^kappa = xi^kappa: the decoder gradient flows into the encoder top.
    for (int l = K; l >= 1; --l) {
      const auto& L = net.layer(l);
      const VectorXd delta = upstream.cwiseProduct(mask_vector(tr.enc_pre[l - 1], nl));
      g.E[l - 1].noalias() += tr.xi[l - 1] * delta.transpose();
      VectorXd down = L.E * delta;
      if (spec.skip) {
        const VectorXd ds = g_chi[l - 1].cwiseProduct(mask_vector(tr.skip_pre[l - 1], nl));
        g.S[l - 1].noalias() += tr.xi[l - 1] * ds.transpose();
        down.noalias() += *L.S * ds;
      }
      upstream = std::move(down);
    }
  }
  return g;
}

double training_kink_margin(const Network& net, const TrainingSet& data) {
  if (net.spec.nonlinearity != Nonlinearity::relu) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& tr : traces_of(net, data)) best = std::min(best, kink_margin(tr));
  return best;
}

MatrixXd grad_skip_analytic(const Network& net, const TrainingSet& data, int l, double margin) {
  const auto& spec = net.spec;
  if (!spec.skip) throw PreconditionError("grad_skip_analytic: network has no skip connections");
  if (l < 1 || l > spec.kappa) throw DimensionError("grad_skip_analytic: layer out of range");
  data.validate(spec);
  const auto traces = traces_of(net, data);
  check_margin(net, traces, margin, "grad_skip_analytic");
  MatrixXd gamma(spec.s(l), data.size());
  std::vector<MatrixXd> factors;
  for (Index i = 0; i < data.size(); ++i) {
    const auto& tr = traces[static_cast<std::size_t>(i)];
    gamma.col(i) = tr.chi[l - 1];
    factors.push_back(skip_factor(net, pattern_of(tr, spec.nonlinearity), l));
  }
  return kronecker_gradient(gamma, factors, residual_matrix(traces, data));
}

MatrixXd grad_enc_analytic(const Network& net, const TrainingSet& data, double margin) {
  const auto& spec = net.spec;
  const int K = spec.kappa;
  data.validate(spec);
  const auto traces = traces_of(net, data);
  check_margin(net, traces, margin, "grad_enc_analytic");
  MatrixXd xi(spec.d(K - 1), data.size());
  std::vector<MatrixXd> factors;
  for (Index i = 0; i < data.size(); ++i) {
    const auto& tr = traces[static_cast<std::size_t>(i)];
    xi.col(i) = tr.xi[K - 1];
    factors.push_back(enc_factor(net, pattern_of(tr, spec.nonlinearity)));
  }
  // The Kronecker form yields the transpose of the d_{kappa-1} x d_kappa gradient.
  return kronecker_gradient(xi, factors, residual_matrix(traces, data)).transpose();
}

BoundCertificate certify_bounds_skip(const Network& net, const TrainingSet& data, int l,
                                     double margin) {
  const auto& spec = net.spec;
  const MatrixXd G = grad_skip_analytic(net, data, l, 0.0);
  const auto traces = traces_of(net, data);
  BoundCertificate c;
  c.kind = "skip";
  c.layer = l;
  c.grad_norm = G.norm();
  c.loss = loss_of(traces, data);
  MatrixXd gamma(spec.s(l), data.size());
  std::vector<MatrixXd> factors;
  for (Index i = 0; i < data.size(); ++i) {
    const auto& tr = traces[static_cast<std::size_t>(i)];
    gamma.col(i) = tr.chi[l - 1];
    factors.push_back(skip_factor(net, pattern_of(tr, spec.nonlinearity), l));
  }
  c.feature_sigma_min = sigma_min(gamma);
  c.feature_sigma_max = sigma_max(gamma);
  fill_factor_stats(c, factors);
  c.features_tall = spec.s(l) >= data.size();
  c.factor_tall = spec.d(l - 1) >= spec.d(0);
  if (spec.nonlinearity == Nonlinearity::relu && margin > 0.0)
    for (const auto& tr : traces) c.kink_margin_ok = c.kink_margin_ok && kink_margin(tr) >= margin;
  const double r = std::sqrt(2.0 * c.loss);
  c.lower = c.feature_sigma_min * c.factor_sigma_min * r;
  c.upper = c.feature_sigma_max * c.factor_sigma_max * r;
  c.holds = sandwich_holds(c.lower, c.grad_norm, c.upper);
  return c;
}

BoundCertificate certify_bounds_enc(const Network& net, const TrainingSet& data, double margin) {
  const auto& spec = net.spec;
  const int K = spec.kappa;
  const MatrixXd G = grad_enc_analytic(net, data, 0.0);
  const auto traces = traces_of(net, data);
  BoundCertificate c;
  c.kind = "encoder";
  c.layer = K;
  c.grad_norm = G.norm();
  c.loss = loss_of(traces, data);
  MatrixXd xi_prev(spec.d(K - 1), data.size());
  MatrixXd xi_top(spec.d(K), data.size());
  std::vector<MatrixXd> factors;
  for (Index i = 0; i < data.size(); ++i) {
    const auto& tr = traces[static_cast<std::size_t>(i)];
    xi_prev.col(i) = tr.xi[K - 1];
    xi_top.col(i) = tr.xi[K];
    factors.push_back(enc_factor(net, pattern_of(tr, spec.nonlinearity)));
  }
  c.feature_sigma_min = sigma_min(xi_prev);
  c.feature_sigma_max = sigma_max(xi_prev);
  fill_factor_stats(c, factors);
  c.features_tall = spec.d(K - 1) >= data.size();
  c.factor_tall = spec.d(K) >= spec.d(0);
  if (spec.nonlinearity == Nonlinearity::relu && margin > 0.0)
    for (const auto& tr : traces) c.kink_margin_ok = c.kink_margin_ok && kink_margin(tr) >= margin;
  const double r = std::sqrt(2.0 * c.loss);
  c.lower = c.feature_sigma_min * c.factor_sigma_min * r;
  c.upper = c.feature_sigma_max * c.factor_sigma_max * r;
  c.holds = sandwich_holds(c.lower, c.grad_norm, c.upper);

  BoundCertificate::Pairing alt;
  alt.feature_sigma_min = sigma_min(xi_top);
  alt.feature_sigma_max = sigma_max(xi_top);
  alt.lower = alt.feature_sigma_min * c.factor_sigma_min * r;
  alt.upper = alt.feature_sigma_max * c.factor_sigma_max * r;
  alt.holds = sandwich_holds(alt.lower, c.grad_norm, alt.upper);
  c.xi_kappa_pairing = alt;
  return c;
}

bool Theorem2Report::applicable() const {
  return std::any_of(layers.begin(), layers.end(),
                     [](const Theorem2Layer& l) { return l.conditions_hold; });
}

bool Theorem2Report::ok() const {
  return std::all_of(layers.begin(), layers.end(), [](const Theorem2Layer& l) { return l.passed; });
}

Theorem2Report check_theorem2(const Network& net, const TrainingSet& data, double tol_positive,
                              double loss_floor) {
  const auto& spec = net.spec;
  if (!spec.skip) throw PreconditionError("check_theorem2: network has no skip connections");
  data.validate(spec);
  const auto traces = traces_of(net, data);
  const MatrixGradients grads = matrix_gradients(net, data);
  Theorem2Report rep;
  rep.loss = loss_of(traces, data);
  rep.samples = data.size();
  std::vector<ActivationPattern> patterns;
  for (const auto& tr : traces) patterns.push_back(pattern_of(tr, spec.nonlinearity));
  for (int l = 1; l <= spec.kappa; ++l) {
    Theorem2Layer t;
    t.layer = l;
    MatrixXd gamma(spec.s(l), data.size());
    for (Index i = 0; i < data.size(); ++i) gamma.col(i) = traces[static_cast<std::size_t>(i)].chi[l - 1];
    t.gamma_rank = numerical_rank(gamma);
    t.gamma_full_rank = t.gamma_rank == data.size();
    t.min_factor_rank = spec.d(0);
    for (const auto& p : patterns)
      t.min_factor_rank = std::min(t.min_factor_rank, numerical_rank(skip_factor(net, p, l)));
    t.factor_full_row_rank = t.min_factor_rank == spec.d(0);
    t.grad_norm = grads.S_tilde[l - 1].norm();
    t.conditions_hold = t.gamma_full_rank && t.factor_full_row_rank;
    t.asserted = t.conditions_hold && rep.loss > loss_floor;
    t.passed = !t.asserted || t.grad_norm > tol_positive;
    rep.layers.push_back(t);
  }
  return rep;
}

TapGradients tap_gradients(const NetworkSpec& spec, const LayerBank& bank, const TrainingSet& data) {
  const Network net = build_network(spec, bank);
  const MatrixGradients g = matrix_gradients(net, data);
  TapGradients out;
  for (int l = 1; l <= spec.kappa; ++l) {
    const auto& L = bank.layer(l);
    const Index q_in = spec.q[l - 1];
    const Index q_out = spec.q[l];
    const Index m_in = spec.m[l - 1];
    const Index m_out = spec.m[l];
    // Block (a, b) is linear in the taps: d/dpsi[k] of I(*)psi Phi is P_k Phi,
    // with P_k the cyclic shift by k.
    std::vector<MatrixXd> shift_pool, shift_unpool, shift;
    for (Index k = 0; k < spec.r; ++k) {
      const MatrixXd P = identity_conv(m_in, VectorXd::Unit(spec.r, k));
      shift_pool.push_back(P * L.pool);
      shift_unpool.push_back(P * L.unpool);
      shift.push_back(P);
    }
    FilterTensor enc(spec.r, q_in, q_out);
    FilterTensor dec(spec.r, q_in, q_out);
    for (Index a = 0; a < q_in; ++a) {
      for (Index b = 0; b < q_out; ++b) {
        const auto gE = g.E[l - 1].block(a * m_in, b * m_out, m_in, m_out);
        const auto gD = g.D[l - 1].block(a * m_in, b * m_out, m_in, m_out);
        for (Index k = 0; k < spec.r; ++k) {
          double ge = gE.cwiseProduct(shift_pool[k]).sum();
          double gd = gD.cwiseProduct(shift_unpool[k]).sum();
          if (spec.skip) {
            ge += g.S[l - 1].block(a * m_in, b * m_in, m_in, m_in).cwiseProduct(shift[k]).sum();
            gd += g.S_tilde[l - 1].block(a * m_in, b * m_in, m_in, m_in).cwiseProduct(shift[k]).sum();
          }
          enc.tap(a, b)(k) = ge;
          dec.tap(a, b)(k) = gd;
        }
      }
    }
    out.enc.push_back(std::move(enc.psi));
    out.dec.push_back(std::move(dec.psi));
  }
  return out;
}

namespace {

double tap_norm_sq(const TapGradients& g) {
  double total = 0.0;
  for (const auto& m : g.enc) total += m.squaredNorm();
  for (const auto& m : g.dec) total += m.squaredNorm();
  return total;
}

LayerBank step_bank(const LayerBank& bank, const TapGradients& g, double eta) {
  LayerBank out = bank;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    out.layers[l].enc.psi -= eta * g.enc[l];
    out.layers[l].dec.psi -= eta * g.dec[l];
  }
  return out;
}

std::vector<BoundCertificate> certificates_for(const Network& net, const TrainingSet& data) {
  std::vector<BoundCertificate> out;
  if (net.spec.skip)
    for (int l = 1; l <= net.spec.kappa; ++l) out.push_back(certify_bounds_skip(net, data, l));
  out.push_back(certify_bounds_enc(net, data));
  return out;
}

}  // namespace

TrainResult train_gd(const NetworkSpec& spec, const LayerBank& bank, const TrainingSet& data,
                     const TrainConfig& config) {
  if (!(config.step_size > 0.0)) throw std::invalid_argument("train_gd: step size must be positive");
  if (config.iterations < 0) throw std::invalid_argument("train_gd: iterations must be >= 0");
  data.validate(spec);
  TrainResult res;
  res.bank = bank;
  Network net = build_network(spec, res.bank);
  double current = loss(net, data);
  double eta = config.step_size;
  const double eta_cap = config.step_size * 1e6;
  const int every = config.checkpoint_every;

  for (int it = 0;; ++it) {
    const TapGradients g = tap_gradients(spec, res.bank, data);
    const double gsq = tap_norm_sq(g);
    res.trajectory.push_back({it, current, std::sqrt(gsq), it == 0 ? 0.0 : eta});
    const bool last = it == config.iterations;
    if (it == 0 || last || (every > 0 && it % every == 0))
      res.checkpoints.push_back({it, certificates_for(net, data)});

    if (!std::isfinite(current) || current > kDivergenceLoss) {
      res.diverged = true;
      std::ostringstream os;
      os << "loss " << current << " exceeds " << kDivergenceLoss << " at iteration " << it;
      res.diagnostic = os.str();
      break;
    }
    if (last || current <= config.target_loss || gsq == 0.0) break;

    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      LayerBank trial = step_bank(res.bank, g, eta);
      Network trial_net = build_network(spec, trial);
      const double next = loss(trial_net, data);
      if (std::isfinite(next) && next <= current - config.armijo * eta * gsq) {
        res.bank = std::move(trial);
        net = std::move(trial_net);
        current = next;
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      res.stalled = true;
      res.diagnostic = "line search found no decrease at iteration " + std::to_string(it);
      if (res.checkpoints.back().iteration != it) res.checkpoints.push_back({it, certificates_for(net, data)});
      break;
    }
    eta = std::min(2.0 * eta, eta_cap);
  }
  return res;
}

TrainingSet random_training_set(const NetworkSpec& spec, Index T, std::uint64_t seed) {
  Rng xr(derive_seed(seed, "inputs"));
  Rng yr(derive_seed(seed, "targets"));
  TrainingSet data;
  data.X = random_gaussian(spec.d(0), T, xr);
  data.Y = random_gaussian(spec.d(0), T, yr);
  return data;
}

Json to_json(const BoundCertificate& c) {
  Json j;
  j["kind"] = c.kind;
  j["layer"] = c.layer;
  j["loss"] = c.loss;
  j["grad_norm"] = c.grad_norm;
  j["lower"] = c.lower;
  j["upper"] = c.upper;
  j["feature_sigma_min"] = c.feature_sigma_min;
  j["feature_sigma_max"] = c.feature_sigma_max;
  j["factor_sigma_min"] = c.factor_sigma_min;
  j["factor_sigma_max"] = c.factor_sigma_max;
  j["features_tall"] = c.features_tall;
  j["factor_tall"] = c.factor_tall;
  j["applicable"] = c.applicable();
  j["kink_margin_ok"] = c.kink_margin_ok;
  j["holds"] = c.holds;
  if (c.xi_kappa_pairing) {
    const auto& p = *c.xi_kappa_pairing;
    j["xi_kappa_pairing"] = {{"feature_sigma_min", p.feature_sigma_min},
                             {"feature_sigma_max", p.feature_sigma_max},
                             {"lower", p.lower},
                             {"upper", p.upper},
                             {"holds", p.holds}};
  }
  return j;
}

Json to_json(const Theorem2Report& r) {
  Json j;
  j["loss"] = r.loss;
  j["samples"] = r.samples;
  j["applicable"] = r.applicable();
  j["ok"] = r.ok();
  Json layers = Json::array();
  for (const auto& t : r.layers) {
    layers.push_back({{"layer", t.layer},
                      {"gamma_rank", t.gamma_rank},
                      {"gamma_full_rank", t.gamma_full_rank},
                      {"min_factor_rank", t.min_factor_rank},
                      {"factor_full_row_rank", t.factor_full_row_rank},
                      {"grad_norm", t.grad_norm},
                      {"conditions_hold", t.conditions_hold},
                      {"asserted", t.asserted},
                      {"passed", t.passed}});
  }
  j["layers"] = std::move(layers);
  return j;
}

Json to_json(const TrainResult& r) {
  Json j;
  j["iterations_run"] = r.trajectory.empty() ? 0 : r.trajectory.back().iteration;
  j["initial_loss"] = r.trajectory.empty() ? 0.0 : r.trajectory.front().loss;
  j["final_loss"] = r.final_loss();
  j["final_grad_norm"] = r.trajectory.empty() ? 0.0 : r.trajectory.back().grad_norm;
  j["diverged"] = r.diverged;
  j["stalled"] = r.stalled;
  j["diagnostic"] = r.diagnostic;
  Json cps = Json::array();
  for (const auto& cp : r.checkpoints) {
    Json certs = Json::array();
    for (const auto& c : cp.certificates) certs.push_back(to_json(c));
    cps.push_back({{"iteration", cp.iteration}, {"certificates", std::move(certs)}});
  }
  j["checkpoints"] = std::move(cps);
  return j;
}

std::string loss_curve_csv(const TrainResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,loss,grad_norm\n";
  for (const auto& p : r.trajectory) os << p.iteration << ',' << p.loss << ',' << p.grad_norm << '\n';
  return os.str();
}

}  // namespace edcnn
