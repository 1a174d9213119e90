#include "edcnn/analysis.hpp"
#include "edcnn/frames.hpp"
#include "edcnn/random.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace edcnn;

namespace {

NetworkSpec spec_of(int kappa, bool skip, Nonlinearity nl, std::vector<Index> q, std::vector<Index> m, int r = 2) {
  NetworkSpec s;
  s.kappa = kappa;
  s.r = r;
  s.q = std::move(q);
  s.m = std::move(m);
  s.skip = skip;
  s.nonlinearity = nl;
  return s;
}

// Forward pass with every ReLU replaced by the frozen mask of `p`.
VectorXd frozen_replay(const Network& net, const ActivationPattern& p, const VectorXd& x) {
  const auto& spec = net.spec;
  std::vector<VectorXd> xi{x}, chi;
  for (int l = 1; l <= spec.kappa; ++l) {
    const auto& L = net.layer(l);
    xi.push_back((L.E.transpose() * xi.back()).cwiseProduct(p.enc[l - 1].cast<double>().matrix()));
    if (spec.skip)
      chi.push_back((L.S->transpose() * xi[l - 1]).cwiseProduct(p.skip[l - 1].cast<double>().matrix()));
  }
  VectorXd xt = xi.back();
  for (int l = spec.kappa; l >= 1; --l) {
    const auto& L = net.layer(l);
    VectorXd pre = L.D * xt;
    if (spec.skip) pre += *L.S_tilde * chi[l - 1];
    xt = pre.cwiseProduct(p.dec[l - 1].cast<double>().matrix());
  }
  return xt;
}

}  // namespace

TEST(Analysis, PatternMatchesPreActivations) {
  const auto spec = spec_of(2, true, Nonlinearity::relu, {1, 2, 4}, {8, 8, 8});
  const Network net = build_network(spec, random_bank(spec, {.seed = 1}));
  Rng rng(4);
  const VectorXd x = random_gaussian(8, rng);
  const ForwardTrace tr = forward(net, x);
  const ActivationPattern p = extract_pattern(net, x);
  ASSERT_EQ(p.enc.size(), 2u);
  ASSERT_EQ(p.skip.size(), 2u);
  ASSERT_EQ(p.dec.size(), 2u);
  for (int l = 0; l < 2; ++l) {
    for (Index i = 0; i < p.enc[l].size(); ++i) EXPECT_EQ(p.enc[l][i], tr.enc_pre[l][i] > 0.0);
    for (Index i = 0; i < p.skip[l].size(); ++i) EXPECT_EQ(p.skip[l][i], tr.skip_pre[l][i] > 0.0);
    for (Index i = 0; i < p.dec[l].size(); ++i) EXPECT_EQ(p.dec[l][i], tr.dec_pre[l][i] > 0.0);
  }
  EXPECT_EQ(p.bit_count(), 16 + 32 + 16 + 32 + 8 + 16);
  EXPECT_EQ(p.hash().size(), 16u);
  EXPECT_LE((frozen_replay(net, p, x) - tr.output()).norm(), 1e-12 * tr.output().norm() + 1e-15);
}

TEST(Analysis, ZeroInputIsAllInactive) {
  const auto spec = spec_of(1, true, Nonlinearity::relu, {1, 2}, {6, 6});
  const Network net = build_network(spec, random_bank(spec, {.seed = 2}));
  const ActivationPattern p = extract_pattern(net, VectorXd::Zero(6));
  for (const auto* g : {&p.enc, &p.skip, &p.dec})
    for (const auto& m : *g) EXPECT_FALSE(m.any());
}

TEST(Analysis, AllPositiveBankGivesAllOnes) {
  auto spec = spec_of(1, false, Nonlinearity::relu, {1, 2}, {4, 4});
  LayerBank bank = random_bank(spec, {.seed = 3});
  for (auto& L : bank.layers) {
    L.enc.psi = L.enc.psi.cwiseAbs();
    L.dec.psi = L.dec.psi.cwiseAbs();
  }
  const Network net = build_network(spec, bank);
  const ActivationPattern p = extract_pattern(net, VectorXd::Ones(4));
  EXPECT_TRUE(p.enc[0].all());
  EXPECT_TRUE(p.dec[0].all());
}

TEST(Analysis, NoNonlinearityGivesOnesAndFrameBasis) {
  const auto spec = spec_of(2, true, Nonlinearity::none, {1, 2, 4}, {6, 6, 6});
  const LayerBank bank = make_frame_bank(spec, {.mode = FrameMode::skip, .seed = 3});
  const Network net = build_network(spec, bank);
  Rng rng(1);
  const LinearRep rep = linear_rep(net, VectorXd(random_gaussian(6, rng)));
  const FrameBasis basis = build_frame_basis(net);
  EXPECT_LE((rep.B - basis.B).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((rep.B_tilde - basis.B_tilde).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((rep.local_map() - MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Analysis, RepresentationIdentityBothModes) {
  for (bool skip : {false, true}) {
    for (int kappa = 1; kappa <= 3; ++kappa) {
      std::vector<Index> q{1}, m{6};
      for (int l = 1; l <= kappa; ++l) {
        q.push_back(2 * q.back());
        m.push_back(6 + l);
      }
      const auto spec = spec_of(kappa, skip, Nonlinearity::relu, q, m);
      const Network net = build_network(spec, random_bank(spec, {.seed = 40u + kappa}));
      Rng rng(kappa);
      for (int t = 0; t < 20; ++t) {
        const VectorXd x = random_gaussian(6, rng);
        const LinearRep rep = linear_rep(net, x);
        EXPECT_EQ(rep.B.cols(), spec.feature_dim());
        const VectorXd y = forward(net, x).output();
        EXPECT_LE(relative_error(rep.local_map() * x, y), 1e-12);
      }
    }
  }
}

TEST(Analysis, SingleLayerRankOneExpansion) {
  const auto spec = spec_of(1, false, Nonlinearity::relu, {1, 3}, {5, 5});
  const Network net = build_network(spec, random_bank(spec, {.seed = 6}));
  Rng rng(2);
  const VectorXd x = random_gaussian(5, rng);
  const ActivationPattern p = extract_pattern(net, x);
  const MatrixXd& E = net.layer(1).E;
  const MatrixXd& D = net.layer(1).D;
  VectorXd y = VectorXd::Zero(5);
  for (Index i = 0; i < E.cols(); ++i) {
    if (!p.enc[0][i]) continue;
    const VectorXd bt = p.dec[0].cast<double>().matrix().cwiseProduct(D.col(i));
    y += bt * E.col(i).dot(x);
  }
  EXPECT_LE((y - forward(net, x).output()).norm(), 1e-12);
}

TEST(Analysis, NrepBound) {
  auto spec = spec_of(2, false, Nonlinearity::relu, {1, 1, 2}, {8, 8, 8});
  EXPECT_EQ(nrep_bound(spec).to_string(), "256");
  spec.skip = true;
  EXPECT_EQ(spec.s(1), 8);
  EXPECT_EQ(spec.s(2), 16);
  EXPECT_EQ(nrep_bound(spec).to_string(), "4294967296");
  auto single = spec_of(1, false, Nonlinearity::relu, {1, 2}, {2, 2}, 1);
  EXPECT_EQ(nrep_bound(single).to_string(), "1");
  EXPECT_EQ(raw_mask_bits(single), 4 + 2);
  single.nonlinearity = Nonlinearity::none;
  EXPECT_EQ(raw_mask_bits(single), 0);
  EXPECT_EQ(PowerOfTwo{64}.to_string(), "18446744073709551616");
  EXPECT_EQ(PowerOfTwo{100}.to_string(), "1267650600228229401496703205376");
  EXPECT_TRUE(PowerOfTwo{3}.at_least(8));
  EXPECT_FALSE(PowerOfTwo{3}.at_least(9));
  EXPECT_TRUE(PowerOfTwo{200}.at_least(~0ull));
}

TEST(Analysis, LinearNetworkHasOneRegion) {
  const auto spec = spec_of(2, true, Nonlinearity::none, {1, 2, 4}, {8, 8, 8});
  const Network net = build_network(spec, make_frame_bank(spec, {.mode = FrameMode::skip, .seed = 1}));
  const RegionCensus c = region_census(net, {.count = 200, .seed = 3});
  EXPECT_EQ(c.distinct(), 1u);
  EXPECT_NEAR(lipschitz_global(c), 1.0, 1e-10);
  EXPECT_LE(c.max_identity_residual, 1e-12);
}

TEST(Analysis, LipschitzScalesWithEncoder) {
  const auto spec = spec_of(2, false, Nonlinearity::none, {1, 2, 4}, {8, 8, 8});
  LayerBank bank = make_frame_bank(spec, {.seed = 1});
  bank.layers[0].enc.psi *= 3.0;
  const RegionCensus c = region_census(build_network(spec, bank), {.count = 10, .seed = 3});
  EXPECT_NEAR(lipschitz_global(c), 3.0, 1e-10);
}

TEST(Analysis, CensusIsDeterministicAndConsistent) {
  const auto spec = spec_of(2, true, Nonlinearity::relu, {1, 2, 2}, {4, 4, 4});
  const Network net = build_network(spec, random_bank(spec, {.seed = 5}));
  const SamplerConfig sc{.count = 500, .distribution = SampleDistribution::sphere, .seed = 9};
  const RegionCensus a = region_census(net, sc);
  const RegionCensus b = region_census(net, sc);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_LE(a.max_identity_residual, 1e-12);
  std::uint64_t total = 0;
  for (const auto& r : a.regions) total += r.count;
  EXPECT_EQ(total, 500u);
  // Every sample of a region has the same local map norm.
  for (std::uint64_t i = 0; i < a.samples; i += 25) {
    const auto& region = a.regions[a.region_of_sample[i]];
    const double k = spectral_norm(linear_rep(net, VectorXd(a.inputs.col(static_cast<Index>(i)))).local_map());
    EXPECT_NEAR(k, region.local_lipschitz, 1e-12 * std::max(1.0, k));
  }
  EXPECT_TRUE(a.within_raw_bound());
  EXPECT_THROW(lipschitz_global(RegionCensus{}), std::invalid_argument);
}

TEST(Analysis, SphereSamplesHaveUnitNorm) {
  const SamplerConfig sc{.count = 3, .distribution = SampleDistribution::sphere, .seed = 1};
  for (std::uint64_t i = 0; i < 3; ++i) EXPECT_NEAR(sample_input(7, sc, i).norm(), 1.0, 1e-14);
  EXPECT_EQ(sample_input(7, sc, 2), sample_input(7, sc, 2));
  EXPECT_NE(sample_input(7, sc, 1), sample_input(7, sc, 2));
}

TEST(Analysis, CensusMatchesAngularSweep) {
  const auto spec = spec_of(1, true, Nonlinearity::relu, {1, 2}, {2, 2}, 1);
  const Network net = build_network(spec, random_bank(spec, {.seed = 12}));
  const auto sweep = oracle::angular_sweep(net);
  ASSERT_GT(sweep.min_arc, 1e-3);
  const RegionCensus c = region_census(net, {.count = 20000, .distribution = SampleDistribution::sphere, .seed = 1});
  EXPECT_EQ(c.distinct(), sweep.patterns);
}

TEST(Analysis, JacobianMatchesFiniteDifferences) {
  const auto spec = spec_of(2, true, Nonlinearity::relu, {1, 2, 4}, {6, 6, 6});
  const Network net = build_network(spec, random_bank(spec, {.seed = 13}));
  Rng rng(6);
  int checked = 0;
  for (int t = 0; t < 40 && checked < 10; ++t) {
    const VectorXd x = random_gaussian(6, rng);
    MatrixXd J;
    try {
      J = jacobian_analytic(net, x, 1e-4);
    } catch (const KinkMarginError&) {
      continue;
    }
    const MatrixXd fd = oracle::jacobian_fd(net, x, 1e-7);
    EXPECT_LE((J - fd).norm(), 1e-5 * std::max(1.0, J.norm()));
    // Positive scaling keeps the region and the Jacobian.
    EXPECT_LE((jacobian_analytic(net, VectorXd(2.0 * x), 1e-4) - J).norm(), 1e-12 * J.norm());
    ++checked;
  }
  EXPECT_EQ(checked, 10);
  EXPECT_THROW(jacobian_analytic(net, VectorXd::Zero(6)), KinkMarginError);
}

TEST(Analysis, FrameJacobianIsIdentity) {
  const auto spec = spec_of(1, false, Nonlinearity::none, {1, 2}, {5, 5});
  const Network net = build_network(spec, make_frame_bank(spec, {.seed = 2}));
  EXPECT_LE((jacobian_analytic(net, VectorXd::Ones(5)) - MatrixXd::Identity(5, 5)).norm(), 1e-12);
}

TEST(Spectral, PowerIterationMatchesSvd) {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const MatrixXd A = random_gaussian(7, 5, rng);
    const auto res = spectral_norm_detailed(A);
    EXPECT_NEAR(res.value, sigma_max(A), 1e-9 * sigma_max(A));
  }
  EXPECT_EQ(spectral_norm(MatrixXd::Zero(3, 3)), 0.0);
  EXPECT_NEAR(spectral_norm(MatrixXd::Identity(4, 4)), 1.0, 1e-14);
}

TEST(Spectral, FallbackWhenNotConverged) {
  Rng rng(2);
  const MatrixXd A = random_gaussian(6, 6, rng);
  const auto res = spectral_norm_detailed(A, {.max_iterations = 1, .tolerance = 0.0, .seed = 1});
  EXPECT_TRUE(res.svd_fallback);
  EXPECT_NEAR(res.value, sigma_max(A), 1e-12);
}

TEST(Spectral, RankAndExtremes) {
  MatrixXd A(3, 2);
  A << 1, 2, 2, 4, 3, 6;
  EXPECT_EQ(numerical_rank(A), 1);
  EXPECT_NEAR(sigma_min(A), 0.0, 1e-12);
  EXPECT_EQ(numerical_rank(MatrixXd::Identity(4, 4)), 4);
}
