#include "edcnn/bank_io.hpp"
#include "edcnn/network.hpp"
#include "edcnn/random.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace edcnn;

namespace {

NetworkSpec make_spec(int kappa, bool skip, Nonlinearity nl, std::vector<Index> q, std::vector<Index> m, int r = 2) {
  NetworkSpec s;
  s.kappa = kappa;
  s.r = r;
  s.q = std::move(q);
  s.m = std::move(m);
  s.skip = skip;
  s.nonlinearity = nl;
  return s;
}

}  // namespace

TEST(Network, OperatorShapes) {
  const auto spec = make_spec(2, true, Nonlinearity::relu, {1, 2, 3}, {6, 8, 8});
  const LayerBank bank = random_bank(spec, {.seed = 1});
  const Network net = build_network(spec, bank);
  EXPECT_EQ(net.layer(1).E.rows(), 6);
  EXPECT_EQ(net.layer(1).E.cols(), 16);
  EXPECT_EQ(net.layer(1).D.rows(), 6);
  EXPECT_EQ(net.layer(1).D.cols(), 16);
  EXPECT_EQ(net.layer(1).S->rows(), 6);
  EXPECT_EQ(net.layer(1).S->cols(), spec.s(1));
  EXPECT_EQ(net.layer(2).S_tilde->cols(), 8 * 3);
  EXPECT_EQ(spec.feature_dim(), 24 + 12 + 24);
}

TEST(Network, ForwardMatchesChannelwiseOracle) {
  int checked = 0;
  for (int kappa = 1; kappa <= 3; ++kappa) {
    for (bool skip : {false, true}) {
      for (auto nl : {Nonlinearity::none, Nonlinearity::relu}) {
        std::vector<Index> q{2}, m{5};
        for (int l = 1; l <= kappa; ++l) {
          q.push_back(q.back() + 1);
          m.push_back(m.back() + (l % 2));
        }
        const auto spec = make_spec(kappa, skip, nl, q, m, 3);
        const LayerBank bank = random_bank(spec, {.seed = static_cast<std::uint64_t>(100 + kappa)});
        const Network net = build_network(spec, bank);
        Rng rng(7);
        for (int t = 0; t < 5; ++t) {
          const VectorXd x = random_gaussian(spec.d(0), rng);
          const VectorXd got = forward(net, x).output();
          const VectorXd want = oracle::forward(spec, bank, x);
          EXPECT_LE((got - want).norm(), 1e-12 * std::max(1.0, want.norm()));
          ++checked;
        }
      }
    }
  }
  EXPECT_EQ(checked, 60);
}

TEST(Network, TraceIsConsistent) {
  const auto spec = make_spec(2, true, Nonlinearity::relu, {1, 2, 4}, {8, 8, 8});
  const Network net = build_network(spec, random_bank(spec, {.seed = 3}));
  Rng rng(1);
  const VectorXd x = random_gaussian(8, rng);
  const ForwardTrace tr = forward(net, x);
  ASSERT_EQ(tr.xi.size(), 3u);
  ASSERT_EQ(tr.chi.size(), 2u);
  EXPECT_EQ(tr.xi[0], x);
  EXPECT_EQ(tr.xi_tilde[2], tr.xi[2]);
  for (int l = 1; l <= 2; ++l) {
    EXPECT_EQ(tr.xi[l], VectorXd(tr.enc_pre[l - 1].cwiseMax(0.0)));
    EXPECT_EQ(tr.xi_tilde[l - 1], VectorXd(tr.dec_pre[l - 1].cwiseMax(0.0)));
  }
  EXPECT_GE(kink_margin(tr), 0.0);
}

TEST(Network, PositivelyHomogeneous) {
  const auto spec = make_spec(2, true, Nonlinearity::relu, {1, 2, 4}, {8, 8, 8});
  const Network net = build_network(spec, random_bank(spec, {.seed = 9}));
  Rng rng(2);
  const VectorXd x = random_gaussian(8, rng);
  const VectorXd y = forward(net, x).output();
  EXPECT_LE((forward(net, VectorXd(3.5 * x)).output() - 3.5 * y).norm(), 1e-12);
  EXPECT_EQ(forward(net, VectorXd(VectorXd::Zero(8))).output(), VectorXd::Zero(8));
}

TEST(Network, IdentityBankWithoutReluIsIdentity) {
  const auto spec = make_spec(3, false, Nonlinearity::none, {2, 2, 2, 2}, {6, 6, 6, 6});
  const Network net = build_network(spec, identity_bank(spec));
  const VectorXd x = VectorXd::LinSpaced(12, -1, 1);
  EXPECT_EQ(forward(net, x).output(), x);
}

TEST(Network, SpecValidation) {
  auto spec = make_spec(1, false, Nonlinearity::relu, {1, 2}, {4, 4}, 5);
  EXPECT_THROW(spec.validate(), DimensionError);
  spec = make_spec(2, false, Nonlinearity::relu, {1, 2}, {4, 4}, 1);
  EXPECT_THROW(spec.validate(), DimensionError);
  spec = make_spec(1, false, Nonlinearity::relu, {2, 3}, {4, 4}, 2);
  EXPECT_NO_THROW(spec.validate());
  EXPECT_THROW(spec.validate_frame_mode(), PreconditionError);
}

TEST(Network, BankValidationAndInputLength) {
  const auto spec = make_spec(1, false, Nonlinearity::relu, {1, 2}, {4, 4});
  LayerBank bank = random_bank(spec, {.seed = 1});
  const Network net = build_network(spec, bank);
  EXPECT_THROW(forward(net, VectorXd(VectorXd::Ones(5))), DimensionError);
  bank.layers[0].pool = MatrixXd::Identity(3, 4);
  EXPECT_THROW(build_network(spec, bank), DimensionError);
  bank.layers.clear();
  EXPECT_THROW(build_network(spec, bank), DimensionError);
}

TEST(Network, EmbeddingDiagnostics) {
  auto spec = make_spec(2, false, Nonlinearity::relu, {2, 1, 5}, {8, 8, 8});
  auto diags = check_embedding_dims(spec);
  ASSERT_EQ(diags.size(), 1u);
  EXPECT_EQ(diags[0].layer, 1);
  EXPECT_NE(diags[0].message.find("monotonicity d_0 <= d_1 violated at l=1"), std::string::npos);

  spec = make_spec(1, false, Nonlinearity::relu, {1, 2}, {8, 8});
  diags = check_embedding_dims(spec);
  ASSERT_EQ(diags.size(), 1u);
  EXPECT_NE(diags[0].message.find("d_kappa <= 2*d_0, 16 <= 16"), std::string::npos);

  spec = make_spec(1, false, Nonlinearity::relu, {1, 4}, {8, 8});
  EXPECT_TRUE(check_embedding_dims(spec).empty());
}

TEST(Network, RandomBankIsSeeded) {
  const auto spec = make_spec(2, false, Nonlinearity::relu, {1, 2, 3}, {4, 6, 6});
  const LayerBank a = random_bank(spec, {.seed = 5});
  const LayerBank b = random_bank(spec, {.seed = 5});
  const LayerBank c = random_bank(spec, {.seed = 6});
  EXPECT_EQ(a.layer(2).enc.psi, b.layer(2).enc.psi);
  EXPECT_EQ(a.layer(1).pool, b.layer(1).pool);
  EXPECT_NE(a.layer(2).enc.psi, c.layer(2).enc.psi);
  EXPECT_THROW(random_bank(spec, {.seed = 1, .pooling = RandomPooling::identity}), PreconditionError);
  const LayerBank p = random_bank(spec, {.seed = 5, .positive_decoder = true});
  EXPECT_GE(p.layer(1).dec.psi.minCoeff(), 0.0);
  EXPECT_GE(p.layer(1).unpool.minCoeff(), 0.0);
}

TEST(BankIo, RoundTripPreservesBank) {
  const auto spec = make_spec(2, true, Nonlinearity::none, {1, 2, 3}, {4, 6, 6});
  const LayerBank bank = random_bank(spec, {.seed = 17});
  const auto path = std::filesystem::temp_directory_path() / "edcnn_bank_roundtrip.json";
  save_bank(path, spec, bank, 17);
  const LoadedBank loaded = load_bank(path);
  std::filesystem::remove(path);
  ASSERT_TRUE(loaded.seed.has_value());
  EXPECT_EQ(*loaded.seed, 17u);
  EXPECT_EQ(spec_to_json(loaded.spec), spec_to_json(spec));
  for (int l = 1; l <= 2; ++l) {
    EXPECT_EQ(loaded.bank.layer(l).enc.psi, bank.layer(l).enc.psi);
    EXPECT_EQ(loaded.bank.layer(l).dec.psi, bank.layer(l).dec.psi);
    EXPECT_EQ(loaded.bank.layer(l).pool, bank.layer(l).pool);
    EXPECT_EQ(loaded.bank.layer(l).unpool, bank.layer(l).unpool);
  }
  const Json j = bank_to_json(spec, bank);
  EXPECT_EQ(j["format"], "edcnn.layer_bank");
  EXPECT_EQ(j["layers"][0]["enc_filters"]["shape"], Json::array({1, 2, 2}));
}

TEST(BankIo, RejectsBadInput) {
  Json spec = {{"kappa", 1}, {"r", 1}, {"q", {1, 1}}, {"m", {2, 2}}, {"nonlinearity", "tanh"}};
  EXPECT_THROW(spec_from_json(spec), std::invalid_argument);
  EXPECT_THROW(load_bank("/nonexistent/bank.json"), std::exception);
  EXPECT_THROW(matrix_from_json(Json{{"shape", {2, 2}}, {"data", {{1, 2}}}}), std::exception);
}

TEST(Network, KinkMarginSkipsUnitsWithoutIncomingSignal) {
  const auto spec = make_spec(2, true, Nonlinearity::relu, {1, 2, 2}, {4, 4, 4});
  Network net = build_network(spec, random_bank(spec, {.seed = 9}));
  net.layer(2).E.setZero();
  Rng rng(1);
  const VectorXd x = random_gaussian(4, rng);
  const ForwardTrace tr = forward(net, x);
  EXPECT_EQ(kink_margin(tr), 0.0);
  EXPECT_GT(kink_margin(net, tr), 0.0);
  // A fully dead level is skipped by both.
  net.layer(1).E.setConstant(-1.0);
  net.layer(1).S->setConstant(-1.0);
  const ForwardTrace dead = forward(net, VectorXd(VectorXd::Ones(4)));
  EXPECT_EQ(dead.xi[1].norm(), 0.0);
  EXPECT_GT(kink_margin(dead), 0.0);
  // The raw input is never exempt.
  EXPECT_EQ(kink_margin(net, forward(net, VectorXd(VectorXd::Zero(4)))), 0.0);
}
