#pragma once

// Piecewise-linear structure of a ReLU encoder-decoder network.
//
// For a fixed input x every ReLU is either active (pre-activation > 0) or
// inactive, and the network acts on x through the linear map Bt(x) B(x)^T with
//   Ups^l  = Ups^{l-1} E^l Lambda^l(x),       Ups^0  = I
//   Upst^l = Upst^{l-1} Lambdat^l(x) D^l,     Upst^0 = I
//   M^l    = S^l Lambda_S^l(x),  Mt^l = Lambdat^l(x) St^l
//   B(x)   = [Ups^kappa | Ups^{kappa-1} M^kappa | ... | M^1]   (skip blocks only with skips)
//   Bt(x)  = [Upst^kappa | Upst^{kappa-1} Mt^kappa | ... | Mt^1]
// Lambdat^l masks the decoder output of layer l (length d_{l-1}).

#include "edcnn/bank_io.hpp"
#include "edcnn/network.hpp"
#include "edcnn/spectral.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace edcnn {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct ActivationPattern {
  std::vector<Mask> enc;   // Lambda^l, length d_l
  std::vector<Mask> skip;  // Lambda_S^l, length s_l (skip only)
  std::vector<Mask> dec;   // Lambdat^l, length d_{l-1}

  /// Bit string of all masks in the order enc^1..enc^k, skip^1..skip^k, dec^1..dec^k.
  std::string key() const;
  /// 64-bit FNV-1a hash of key(), as 16 hex digits.
  std::string hash() const;
  Index bit_count() const;

  bool operator==(const ActivationPattern& other) const { return key() == other.key(); }
};

/// Masks of a trace; all-ones when the network has no nonlinearity.
ActivationPattern pattern_of(const ForwardTrace& trace, Nonlinearity nonlinearity);
ActivationPattern extract_pattern(const Network& net, const VectorXd& x);

struct UpsilonChain {
  std::vector<MatrixXd> upsilon;        // Ups^0 .. Ups^kappa, d_0 x d_l
  std::vector<MatrixXd> upsilon_tilde;  // Upst^0 .. Upst^kappa, d_0 x d_l
  std::vector<MatrixXd> M;              // M^1 .. M^kappa, d_{l-1} x s_l (skip only)
  std::vector<MatrixXd> M_tilde;        // Mt^1 .. Mt^kappa
};

UpsilonChain upsilon_chain(const Network& net, const ActivationPattern& pattern);

struct LinearRep {
  MatrixXd B;
  MatrixXd B_tilde;
  ActivationPattern pattern;

  /// Bt(x) B(x)^T, the local linear map (and Jacobian) of the network.
  MatrixXd local_map() const { return B_tilde * B.transpose(); }
};

LinearRep linear_rep(const Network& net, const ActivationPattern& pattern);
LinearRep linear_rep(const Network& net, const VectorXd& x);

/// 2^exponent, held exactly through its exponent.
struct PowerOfTwo {
  Index exponent = 0;

  std::string to_string() const;
  bool at_least(std::uint64_t count) const {
    return exponent >= 64 || count <= (std::uint64_t{1} << exponent);
  }
};

/// 2^{sum_{i=1..k} d_i - d_k}, times 2^{sum_l s_l} with skips.
PowerOfTwo nrep_bound(const NetworkSpec& spec);

/// Number of ReLU units in the network as built here:
/// sum_l d_l (encoder) + sum_l d_{l-1} (decoder) + sum_l s_l (skip); 0 without ReLU.
Index raw_mask_bits(const NetworkSpec& spec);

enum class SampleDistribution { gaussian, sphere };

inline const char* to_string(SampleDistribution d) {
  return d == SampleDistribution::sphere ? "sphere" : "gaussian";
}

struct SamplerConfig {
  std::uint64_t count = 1000;
  SampleDistribution distribution = SampleDistribution::gaussian;
  std::uint64_t seed = 0;
};

/// Input i of a sampler stream; depends only on (seed, i).
VectorXd sample_input(Index d0, const SamplerConfig& config, std::uint64_t index);

struct Region {
  std::string key;
  std::string hash;
  std::uint64_t count = 0;
  std::uint64_t representative = 0;  // index of the first sample in the region
  double local_lipschitz = 0.0;      // K_p = ||Bt(z_p) B(z_p)^T||_2
};

struct RegionCensus {
  std::uint64_t samples = 0;
  PowerOfTwo nrep;
  Index raw_bits = 0;
  std::vector<Region> regions;                // ordered by pattern key
  std::vector<std::size_t> region_of_sample;  // index into regions
  MatrixXd inputs;                            // d_0 x samples
  double max_identity_residual = 0.0;         // max relative |F(x) - Bt B^T x|

  std::uint64_t distinct() const { return regions.size(); }
  bool within_bound() const { return nrep.at_least(distinct()); }
  bool within_raw_bound() const { return PowerOfTwo{raw_bits}.at_least(distinct()); }
};

RegionCensus region_census(const Network& net, const SamplerConfig& config,
                           const PowerIterationOptions& power = {});

/// sup_p K_p over the sampled regions: a lower bound on the global constant.
double lipschitz_global(const RegionCensus& census);

/// Relative residual |a - b| / |b| (absolute when b == 0).
double relative_error(const VectorXd& a, const VectorXd& b);

/// Bt(x) B(x)^T. Throws KinkMarginError if some pre-activation has |value| < margin.
MatrixXd jacobian_analytic(const Network& net, const VectorXd& x, double margin = 1e-8);

Json to_json(const RegionCensus& census, bool include_regions = true);

}  // namespace edcnn
