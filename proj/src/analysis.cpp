#include "edcnn/analysis.hpp"

#include "edcnn/random.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace edcnn {

namespace {

Mask mask_of(const VectorXd& pre, Nonlinearity nonlinearity) {
  if (nonlinearity == Nonlinearity::none) return Mask::Constant(pre.size(), true);
  return pre.array() > 0.0;
}

VectorXd as_diag(const Mask& m) { return m.cast<double>().matrix(); }

void append_bits(std::string& out, const Mask& m) {
  for (Index i = 0; i < m.size(); ++i) out.push_back(m[i] ? '1' : '0');
}

}  // namespace

std::string ActivationPattern::key() const {
  std::string out;
  out.reserve(static_cast<std::size_t>(bit_count()) + 3 * (enc.size() + skip.size() + dec.size()));
  for (const auto* group : {&enc, &skip, &dec}) {
    for (const Mask& m : *group) {
      append_bits(out, m);
      out.push_back('|');
    }
    out.push_back('/');
  }
  return out;
}

std::string ActivationPattern::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(key())));
  return buf;
}

Index ActivationPattern::bit_count() const {
  Index n = 0;
  for (const auto* group : {&enc, &skip, &dec})
    for (const Mask& m : *group) n += m.size();
  return n;
}

ActivationPattern pattern_of(const ForwardTrace& trace, Nonlinearity nonlinearity) {
  ActivationPattern p;
  for (const auto& v : trace.enc_pre) p.enc.push_back(mask_of(v, nonlinearity));
  for (const auto& v : trace.skip_pre) p.skip.push_back(mask_of(v, nonlinearity));
  for (const auto& v : trace.dec_pre) p.dec.push_back(mask_of(v, nonlinearity));
  return p;
}

ActivationPattern extract_pattern(const Network& net, const VectorXd& x) {
  return pattern_of(forward(net, x), net.spec.nonlinearity);
}

UpsilonChain upsilon_chain(const Network& net, const ActivationPattern& pattern) {
  const auto& spec = net.spec;
  const int K = spec.kappa;
  const Index d0 = spec.d(0);
  UpsilonChain c;
  c.upsilon.push_back(MatrixXd::Identity(d0, d0));
  c.upsilon_tilde.push_back(MatrixXd::Identity(d0, d0));
  for (int l = 1; l <= K; ++l) {
    const auto& L = net.layer(l);
    c.upsilon.push_back(c.upsilon.back() * L.E * as_diag(pattern.enc[l - 1]).asDiagonal());
    c.upsilon_tilde.push_back(c.upsilon_tilde.back() * as_diag(pattern.dec[l - 1]).asDiagonal() *
                              L.D);
    if (spec.skip) {
      c.M.push_back(*L.S * as_diag(pattern.skip[l - 1]).asDiagonal());
      c.M_tilde.push_back(as_diag(pattern.dec[l - 1]).asDiagonal() * *L.S_tilde);
    }
  }
  return c;
}

LinearRep linear_rep(const Network& net, const ActivationPattern& pattern) {
  const auto& spec = net.spec;
  const int K = spec.kappa;
  const UpsilonChain c = upsilon_chain(net, pattern);
  LinearRep rep;
  rep.pattern = pattern;
  rep.B.resize(spec.d(0), spec.feature_dim());
  rep.B_tilde.resize(spec.d(0), spec.feature_dim());
  Index col = 0;
  rep.B.middleCols(col, spec.d(K)) = c.upsilon[K];
  rep.B_tilde.middleCols(col, spec.d(K)) = c.upsilon_tilde[K];
  col += spec.d(K);
  if (spec.skip) {
    for (int l = K; l >= 1; --l) {
      const Index s = spec.s(l);
      rep.B.middleCols(col, s) = c.upsilon[l - 1] * c.M[l - 1];
      rep.B_tilde.middleCols(col, s) = c.upsilon_tilde[l - 1] * c.M_tilde[l - 1];
      col += s;
    }
  }
  return rep;
}

LinearRep linear_rep(const Network& net, const VectorXd& x) {
  return linear_rep(net, extract_pattern(net, x));
}

std::string PowerOfTwo::to_string() const {
  // Little-endian decimal digits, doubled `exponent` times.
  std::vector<int> digits{1};
  for (Index e = 0; e < exponent; ++e) {
    int carry = 0;
    for (int& d : digits) {
      const int v = 2 * d + carry;
      d = v % 10;
      carry = v / 10;
    }
    if (carry) digits.push_back(carry);
  }
  std::string out;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) out.push_back(static_cast<char>('0' + *it));
  return out;
}

PowerOfTwo nrep_bound(const NetworkSpec& spec) {
  Index exponent = 0;
  for (int l = 1; l <= spec.kappa; ++l) exponent += spec.d(l);
  exponent -= spec.d(spec.kappa);
  if (spec.skip)
    for (int l = 1; l <= spec.kappa; ++l) exponent += spec.s(l);
  return {exponent};
}

Index raw_mask_bits(const NetworkSpec& spec) {
  if (spec.nonlinearity == Nonlinearity::none) return 0;
  Index bits = 0;
  for (int l = 1; l <= spec.kappa; ++l) {
    bits += spec.d(l) + spec.d(l - 1);
    if (spec.skip) bits += spec.s(l);
  }
  return bits;
}

VectorXd sample_input(Index d0, const SamplerConfig& config, std::uint64_t index) {
  Rng rng(derive_seed(config.seed, index));
  return config.distribution == SampleDistribution::sphere ? random_unit_vector(d0, rng)
                                                           : random_gaussian(d0, rng);
}

double relative_error(const VectorXd& a, const VectorXd& b) {
  const double diff = (a - b).norm();
  const double scale = b.norm();
  return scale > 0.0 ? diff / scale : diff;
}

RegionCensus region_census(const Network& net, const SamplerConfig& config,
                           const PowerIterationOptions& power) {
  const auto& spec = net.spec;
  RegionCensus census;
  census.samples = config.count;
  census.nrep = nrep_bound(spec);
  census.raw_bits = raw_mask_bits(spec);
  census.inputs.resize(spec.d(0), static_cast<Index>(config.count));

  struct Pending {
    std::uint64_t count = 0;
    std::uint64_t representative = 0;
    ActivationPattern pattern;
  };
  std::map<std::string, Pending> by_key;
  std::vector<std::string> sample_keys;
  sample_keys.reserve(config.count);

  for (std::uint64_t i = 0; i < config.count; ++i) {
    const VectorXd x = sample_input(spec.d(0), config, i);
    census.inputs.col(static_cast<Index>(i)) = x;
    const ForwardTrace tr = forward(net, x);
    ActivationPattern p = pattern_of(tr, spec.nonlinearity);
    const LinearRep rep = linear_rep(net, p);
    census.max_identity_residual = std::max(
        census.max_identity_residual, relative_error(rep.local_map() * x, tr.output()));
    std::string key = p.key();
    auto [it, inserted] = by_key.try_emplace(key);
    if (inserted) {
      it->second.representative = i;
      it->second.pattern = std::move(p);
    }
    ++it->second.count;
    sample_keys.push_back(std::move(key));
  }

  std::map<std::string, std::size_t> index_of;
  for (auto& [key, pending] : by_key) {
    Region region;
    region.key = key;
    region.hash = pending.pattern.hash();
    region.count = pending.count;
    region.representative = pending.representative;
    region.local_lipschitz = spectral_norm(linear_rep(net, pending.pattern).local_map(), power);
    index_of[key] = census.regions.size();
    census.regions.push_back(std::move(region));
  }
  census.region_of_sample.reserve(sample_keys.size());
  for (const auto& key : sample_keys) census.region_of_sample.push_back(index_of.at(key));
  return census;
}

double lipschitz_global(const RegionCensus& census) {
  if (census.regions.empty()) throw std::invalid_argument("lipschitz_global: empty census");
  double best = 0.0;
  for (const auto& r : census.regions) best = std::max(best, r.local_lipschitz);
  return best;
}

MatrixXd jacobian_analytic(const Network& net, const VectorXd& x, double margin) {
  const ForwardTrace tr = forward(net, x);
  if (net.spec.nonlinearity == Nonlinearity::relu) {
    const double observed = kink_margin(net, tr);
    if (observed < margin)
      throw KinkMarginError("jacobian_analytic: input lies within " + std::to_string(observed) +
                            " of a ReLU kink (margin " + std::to_string(margin) +
                            "); resample the input");
  }
  return linear_rep(net, pattern_of(tr, net.spec.nonlinearity)).local_map();
}

Json to_json(const RegionCensus& census, bool include_regions) {
  Json out;
  out["samples"] = census.samples;
  out["distinct_patterns"] = census.distinct();
  out["N_rep"] = census.nrep.to_string();
  out["N_rep_log2"] = census.nrep.exponent;
  out["within_N_rep"] = census.within_bound();
  out["raw_mask_bits"] = census.raw_bits;
  out["within_raw_bound"] = census.within_raw_bound();
  out["max_identity_residual"] = census.max_identity_residual;
  if (include_regions) {
    Json regions = Json::array();
    for (const auto& r : census.regions) {
      Json j;
      j["pattern_hash"] = r.hash;
      j["count"] = r.count;
      j["representative_sample"] = r.representative;
      j["K_p"] = r.local_lipschitz;
      regions.push_back(std::move(j));
    }
    out["regions"] = std::move(regions);
  }
  return out;
}

}  // namespace edcnn
