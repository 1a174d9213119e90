#pragma once

// l2 training loss, gradients with respect to unstructured layer matrices,
// singular-value bounds on those gradients, and a small gradient-descent
// trainer over the filter taps.
//
// For the skip matrix St^l treated as a free d_{l-1} x s_l matrix,
//   vec(grad_{St^l} C) = (Gamma^l kron I_{d_{l-1}}) blkdiag_i(Lt^l Upst^{l-1}^T (x_i)) R,
// with R the stacked residuals F(x_i) - y_i, Gamma^l = [chi^l(x_1) ... chi^l(x_T)]
// and Lt^l = Lambdat^l. Then
//   smin(Gamma^l) min_i smin(Lt^l Upst^{l-1}^T) sqrt(2C) <= |grad|_F
//     <= smax(Gamma^l) max_i smax(Lt^l Upst^{l-1}^T) sqrt(2C)
// whenever s_l >= T and d_{l-1} >= d_0. The encoder matrix E^kappa has the
// same structure with Xi^{kappa-1} and Lambda^kappa Upst^kappa^T.

#include "edcnn/analysis.hpp"
#include "edcnn/bank_io.hpp"
#include "edcnn/network.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace edcnn {

struct TrainingSet {
  MatrixXd X;  // d_0 x T
  MatrixXd Y;  // d_0 x T

  Index size() const { return X.cols(); }
  void validate(const NetworkSpec& spec) const;
};

/// C(W) = 1/2 sum_i |F(W, x_i) - y_i|^2, accumulated in sample order.
double loss(const Network& net, const TrainingSet& data);

struct FeatureMatrices {
  std::vector<MatrixXd> xi;     // Xi^0 .. Xi^kappa, d_l x T
  std::vector<MatrixXd> gamma;  // Gamma^1 .. Gamma^kappa, s_l x T (skip only)

  const MatrixXd& xi_kappa() const { return xi.back(); }
};

FeatureMatrices feature_matrices(const Network& net, const TrainingSet& data);

/// Gradient of C with respect to every layer matrix taken as a free matrix
/// (reverse-mode through the stored traces). ReLU derivative at 0 is 0.
struct MatrixGradients {
  std::vector<MatrixXd> E, D, S, S_tilde;  // index l - 1
};

MatrixGradients matrix_gradients(const Network& net, const TrainingSet& data);

/// Smallest kink margin over all training traces (+inf without ReLU).
double training_kink_margin(const Network& net, const TrainingSet& data);

/// Kronecker-form gradient of C with respect to St^l (free), shaped d_{l-1} x s_l.
/// `l` is 1-based. Throws KinkMarginError when a trace is within `margin` of a kink.
MatrixXd grad_skip_analytic(const Network& net, const TrainingSet& data, int l,
                            double margin = 1e-8);

/// Kronecker-form gradient of C with respect to E^kappa (free), d_{kappa-1} x d_kappa.
MatrixXd grad_enc_analytic(const Network& net, const TrainingSet& data, double margin = 1e-8);

struct BoundCertificate {
  std::string kind;  // "skip" or "encoder"
  int layer = 0;
  double grad_norm = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double feature_sigma_min = 0.0;
  double feature_sigma_max = 0.0;
  double factor_sigma_min = 0.0;  // min over samples
  double factor_sigma_max = 0.0;  // max over samples
  std::vector<double> sample_sigma_min;
  std::vector<double> sample_sigma_max;
  double loss = 0.0;
  bool features_tall = false;  // feature rows >= T
  bool factor_tall = false;    // d_{l-1} >= d_0 (or d_kappa >= d_0)
  bool kink_margin_ok = true;
  bool holds = false;          // sandwich within slack

  /// Encoder certificates also evaluate the pairing with Xi^kappa.
  struct Pairing {
    double feature_sigma_min = 0.0;
    double feature_sigma_max = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool holds = false;
  };
  std::optional<Pairing> xi_kappa_pairing;

  bool applicable() const { return features_tall && factor_tall; }
};

inline constexpr double kBoundSlack = 1e-8;

BoundCertificate certify_bounds_skip(const Network& net, const TrainingSet& data, int l,
                                     double margin = 1e-8);
BoundCertificate certify_bounds_enc(const Network& net, const TrainingSet& data,
                                    double margin = 1e-8);

struct Theorem2Layer {
  int layer = 0;
  Index gamma_rank = 0;
  bool gamma_full_rank = false;
  Index min_factor_rank = 0;  // min_i rank(Upst^{l-1}(x_i) Lambdat^l(x_i))
  bool factor_full_row_rank = false;
  double grad_norm = 0.0;
  bool conditions_hold = false;
  bool asserted = false;
  bool passed = true;
};

struct Theorem2Report {
  double loss = 0.0;
  Index samples = 0;
  std::vector<Theorem2Layer> layers;

  bool applicable() const;
  bool ok() const;
};

/// Requires skip connections. For each layer with rank(Gamma^l) == T and
/// Upst^{l-1} Lambdat^l of full row rank on every sample, asserts a gradient
/// norm above `tol_positive` whenever the loss exceeds `loss_floor`.
Theorem2Report check_theorem2(const Network& net, const TrainingSet& data,
                              double tol_positive = 1e-12, double loss_floor = 0.0);

/// Gradient of C with respect to every encoder/decoder filter tap, by the chain
/// rule through the block structure of E, D, S, St. Pooling is held fixed.
struct TapGradients {
  std::vector<MatrixXd> enc;  // same layout as FilterTensor::psi, index l - 1
  std::vector<MatrixXd> dec;
};

TapGradients tap_gradients(const NetworkSpec& spec, const LayerBank& bank, const TrainingSet& data);

struct TrainConfig {
  double step_size = 1e-2;
  int iterations = 1000;
  int checkpoint_every = 0;  // 0: certificates only at start and end
  double armijo = 1e-4;
  double target_loss = 0.0;  // stop once the loss is at or below this value
  std::uint64_t seed = 0;
};

struct TrainPoint {
  int iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct TrainCheckpoint {
  int iteration = 0;
  std::vector<BoundCertificate> certificates;
};

struct TrainResult {
  LayerBank bank;
  std::vector<TrainPoint> trajectory;
  std::vector<TrainCheckpoint> checkpoints;
  bool diverged = false;
  bool stalled = false;  // line search found no decrease
  std::string diagnostic;

  double final_loss() const { return trajectory.empty() ? 0.0 : trajectory.back().loss; }
};

inline constexpr double kDivergenceLoss = 1e12;

/// Gradient descent with Armijo backtracking on all filter taps.
TrainResult train_gd(const NetworkSpec& spec, const LayerBank& bank, const TrainingSet& data,
                     const TrainConfig& config);

/// Seeded training set: Gaussian inputs and Gaussian targets.
TrainingSet random_training_set(const NetworkSpec& spec, Index T, std::uint64_t seed);

Json to_json(const BoundCertificate& c);
Json to_json(const Theorem2Report& r);
Json to_json(const TrainResult& r);
std::string loss_curve_csv(const TrainResult& r);

}  // namespace edcnn
