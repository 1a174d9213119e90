#pragma once

// Brute-force reference implementations used by the tests. They are written
// with explicit index loops and never call the operator builders they check.

#include "edcnn/analysis.hpp"
#include "edcnn/landscape.hpp"
#include "edcnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using edcnn::Index;
using edcnn::MatrixXd;
using edcnn::VectorXd;

inline Index wrap(Index i, Index n) { return ((i % n) + n) % n; }

/// y[t] = sum_k x[t - k] h[k] over the period max(len x, len h).
inline VectorXd circ_conv(const VectorXd& x, const VectorXd& h) {
  const Index n = std::max(x.size(), h.size());
  VectorXd y = VectorXd::Zero(n);
  for (Index t = 0; t < n; ++t)
    for (Index k = 0; k < h.size(); ++k) {
      const Index j = wrap(t - k, n);
      if (j < x.size()) y[t] += x[j] * h[k];
    }
  return y;
}

/// Circular convolution at an explicit period n (both operands zero-padded).
inline VectorXd circ_conv_n(const VectorXd& x, const VectorXd& h, Index n) {
  VectorXd y = VectorXd::Zero(n);
  for (Index t = 0; t < n; ++t)
    for (Index k = 0; k < h.size(); ++k)
      for (Index j = 0; j < x.size(); ++j)
        if (wrap(j + k, n) == t) y[t] += x[j] * h[k];
  return y;
}

/// z[i] = sum_t psi[(t - i) mod m] u[t], the adjoint of u -> u (*) psi.
inline VectorXd circ_corr(const VectorXd& u, const VectorXd& psi) {
  const Index m = u.size();
  VectorXd z = VectorXd::Zero(m);
  for (Index i = 0; i < m; ++i)
    for (Index t = 0; t < m; ++t) {
      const Index k = wrap(t - i, m);
      if (k < psi.size()) z[i] += psi[k] * u[t];
    }
  return z;
}

inline VectorXd channel(const VectorXd& v, Index c, Index m) { return v.segment(c * m, m); }

inline VectorXd relu(const VectorXd& v, edcnn::Nonlinearity nl) {
  return nl == edcnn::Nonlinearity::relu ? VectorXd(v.cwiseMax(0.0)) : v;
}

struct LayerOut {
  VectorXd xi, chi, pre, skip_pre;
};

/// Channelwise encoder of layer l:
///   pre_b   = Phi^T sum_a corr(xi_a, psi_{b,a})
///   skip_b  =       sum_a corr(xi_a, psi_{b,a})
inline LayerOut encoder(const edcnn::NetworkSpec& spec, const edcnn::LayerFilters& L,
                        const VectorXd& x, int l) {
  const Index qi = spec.q[l - 1], qo = spec.q[l], mi = spec.m[l - 1], mo = spec.m[l];
  LayerOut out;
  out.pre = VectorXd::Zero(qo * mo);
  out.skip_pre = VectorXd::Zero(qo * mi);
  for (Index b = 0; b < qo; ++b) {
    VectorXd acc = VectorXd::Zero(mi);
    for (Index a = 0; a < qi; ++a) acc += circ_corr(channel(x, a, mi), L.enc.tap(a, b));
    for (Index j = 0; j < mo; ++j)
      for (Index i = 0; i < mi; ++i) out.pre[b * mo + j] += L.pool(i, j) * acc[i];
    out.skip_pre.segment(b * mi, mi) = acc;
  }
  out.xi = relu(out.pre, spec.nonlinearity);
  out.chi = relu(out.skip_pre, spec.nonlinearity);
  return out;
}

/// Channelwise decoder pre-activation of layer l:
///   pre_a = sum_b (Phit xit_b) (*) psit_{a,b} + sum_b chi_b (*) psit_{a,b}
inline VectorXd decoder_pre(const edcnn::NetworkSpec& spec, const edcnn::LayerFilters& L,
                            const VectorXd& xt, const VectorXd* chi, int l) {
  const Index qi = spec.q[l - 1], qo = spec.q[l], mi = spec.m[l - 1], mo = spec.m[l];
  VectorXd pre = VectorXd::Zero(qi * mi);
  for (Index a = 0; a < qi; ++a)
    for (Index b = 0; b < qo; ++b) {
      VectorXd up = VectorXd::Zero(mi);
      const VectorXd in = channel(xt, b, mo);
      for (Index i = 0; i < mi; ++i)
        for (Index j = 0; j < mo; ++j) up[i] += L.unpool(i, j) * in[j];
      pre.segment(a * mi, mi) += circ_conv_n(up, L.dec.tap(a, b), mi);
      if (chi != nullptr) pre.segment(a * mi, mi) += circ_conv_n(channel(*chi, b, mi), L.dec.tap(a, b), mi);
    }
  return pre;
}

/// Full network output computed channel by channel.
inline VectorXd forward(const edcnn::NetworkSpec& spec, const edcnn::LayerBank& bank, const VectorXd& x) {
  std::vector<LayerOut> enc;
  VectorXd cur = x;
  for (int l = 1; l <= spec.kappa; ++l) {
    enc.push_back(encoder(spec, bank.layer(l), cur, l));
    cur = enc.back().xi;
  }
  VectorXd xt = cur;
  for (int l = spec.kappa; l >= 1; --l) {
    const VectorXd* chi = spec.skip ? &enc[l - 1].chi : nullptr;
    xt = relu(decoder_pre(spec, bank.layer(l), xt, chi, l), spec.nonlinearity);
  }
  return xt;
}

/// Cascaded filter of E^1..E^l block (s, t) by explicit enumeration of every
/// index path j_1..j_{l-1}: sum over paths of psi^1_{j_1,s} (*) ... (*) psi^l_{t,j_{l-1}}.
/// With `skip_last` the last factor is the same filter (S^l uses the encoder taps);
/// `decoder` swaps in dec taps with index order (a, b) = (s side, t side).
inline VectorXd cascade(const edcnn::NetworkSpec& spec, const edcnn::LayerBank& bank, int l, Index s,
                        Index t, bool decoder) {
  const Index m = spec.m[0];
  VectorXd total = VectorXd::Zero(m);
  std::vector<Index> path(static_cast<std::size_t>(l) + 1);
  path[0] = s;
  path[l] = t;
  std::function<void(int)> walk = [&](int depth) {
    if (depth == l) {
      VectorXd acc = VectorXd::Zero(m);
      acc[0] = 1.0;
      for (int k = 1; k <= l; ++k) {
        const auto& L = bank.layer(k);
        // Block (a, b) of layer k carries enc psi_{b,a} = enc.tap(a, b) or dec.tap(a, b).
        const VectorXd f = decoder ? VectorXd(L.dec.tap(path[k - 1], path[k]))
                                   : VectorXd(L.enc.tap(path[k - 1], path[k]));
        acc = circ_conv_n(acc, f, m);
      }
      total += acc;
      return;
    }
    for (Index j = 0; j < spec.q[depth]; ++j) {
      path[depth] = j;
      walk(depth + 1);
    }
  };
  walk(1);
  return total;
}

/// Central-difference Jacobian of the network output.
inline MatrixXd jacobian_fd(const edcnn::Network& net, const VectorXd& x, double h) {
  const Index n = x.size();
  MatrixXd J(n, n);
  for (Index j = 0; j < n; ++j) {
    VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (edcnn::forward(net, xp).output() - edcnn::forward(net, xm).output()) / (2.0 * h);
  }
  return J;
}

/// Loss by a plain loop over samples and coordinates.
inline double loss_naive(const edcnn::Network& net, const edcnn::TrainingSet& data) {
  double total = 0.0;
  for (Index i = 0; i < data.X.cols(); ++i) {
    const VectorXd y = edcnn::forward(net, VectorXd(data.X.col(i))).output();
    for (Index k = 0; k < y.size(); ++k) total += 0.5 * (y[k] - data.Y(k, i)) * (y[k] - data.Y(k, i));
  }
  return total;
}

/// Central differences of the loss over every entry of a free layer matrix.
inline MatrixXd grad_fd(edcnn::Network net, const edcnn::TrainingSet& data,
                        const std::function<MatrixXd&(edcnn::Network&)>& select, double h0 = 1e-6) {
  MatrixXd& W = select(net);
  MatrixXd G(W.rows(), W.cols());
  for (Index k = 0; k < W.size(); ++k) {
    const double orig = W.data()[k];
    const double h = h0 * (1.0 + std::abs(orig));
    W.data()[k] = orig + h;
    const double lp = loss_naive(net, data);
    W.data()[k] = orig - h;
    const double lm = loss_naive(net, data);
    W.data()[k] = orig;
    G.data()[k] = (lp - lm) / (2.0 * h);
  }
  return G;
}

struct SweepResult {
  std::size_t patterns = 0;
  double min_arc = 0.0;
};

/// Exact count of activation patterns of a network with d_0 = 2.
/// The network is positively homogeneous, so patterns depend only on the
/// angle. Pre-activations are linear on every arc where all upstream masks are
/// constant; critical angles are added level by level (encoder layers in
/// order, then decoder layers from the top down) by solving g . x = 0 on each arc.
inline SweepResult angular_sweep(const edcnn::Network& net) {
  using edcnn::ForwardTrace;
  const auto& spec = net.spec;
  const double two_pi = 2.0 * std::numbers::pi;
  auto point = [](double th) { return VectorXd((VectorXd(2) << std::cos(th), std::sin(th)).finished()); };

  // Levels: vectors of pre-activations read from a trace.
  std::vector<std::function<VectorXd(const ForwardTrace&)>> levels;
  for (int l = 1; l <= spec.kappa; ++l)
    levels.push_back([l, &spec](const ForwardTrace& tr) {
      if (!spec.skip) return tr.enc_pre[l - 1];
      VectorXd v(tr.enc_pre[l - 1].size() + tr.skip_pre[l - 1].size());
      v << tr.enc_pre[l - 1], tr.skip_pre[l - 1];
      return v;
    });
  for (int l = spec.kappa; l >= 1; --l)
    levels.push_back([l](const ForwardTrace& tr) { return tr.dec_pre[l - 1]; });

  std::vector<double> cuts;  // sorted angles in [0, 2 pi)
  for (const auto& level : levels) {
    std::vector<double> arcs_lo, arcs_hi;
    if (cuts.empty()) {
      arcs_lo.push_back(0.0);
      arcs_hi.push_back(two_pi);
    } else {
      for (std::size_t i = 0; i < cuts.size(); ++i) {
        arcs_lo.push_back(cuts[i]);
        arcs_hi.push_back(i + 1 < cuts.size() ? cuts[i + 1] : cuts[0] + two_pi);
      }
    }
    std::vector<double> added;
    for (std::size_t k = 0; k < arcs_lo.size(); ++k) {
      const double lo = arcs_lo[k], hi = arcs_hi[k];
      const double ta = lo + (hi - lo) / 3.0, tb = lo + 2.0 * (hi - lo) / 3.0;
      MatrixXd P(2, 2);
      P << point(ta), point(tb);
      MatrixXd V(level(edcnn::forward(net, point(ta))).size(), 2);
      V.col(0) = level(edcnn::forward(net, point(ta)));
      V.col(1) = level(edcnn::forward(net, point(tb)));
      const MatrixXd G = V * P.inverse();  // pre = G x on this arc
      for (Index u = 0; u < G.rows(); ++u) {
        if (G.row(u).norm() == 0.0) continue;
        const double base = std::atan2(-G(u, 0), G(u, 1));  // g . (cos, sin) = 0
        for (double th : {base, base + std::numbers::pi}) {
          double t = std::fmod(th, two_pi);
          if (t < 0) t += two_pi;
          for (double cand : {t, t + two_pi})
            if (cand > lo && cand < hi) added.push_back(std::fmod(cand, two_pi));
        }
      }
    }
    cuts.insert(cuts.end(), added.begin(), added.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) < 1e-13; }),
               cuts.end());
  }

  SweepResult res;
  std::set<std::string> keys;
  res.min_arc = two_pi;
  if (cuts.empty()) {
    keys.insert(edcnn::extract_pattern(net, point(0.0)).key());
  } else {
    for (std::size_t i = 0; i < cuts.size(); ++i) {
      const double lo = cuts[i];
      const double hi = i + 1 < cuts.size() ? cuts[i + 1] : cuts[0] + two_pi;
      res.min_arc = std::min(res.min_arc, hi - lo);
      keys.insert(edcnn::extract_pattern(net, point(0.5 * (lo + hi))).key());
    }
  }
  res.patterns = keys.size();
  return res;
}

}  // namespace oracle
