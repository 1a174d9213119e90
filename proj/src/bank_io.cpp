#include "edcnn/bank_io.hpp"

#include <cmath>
#include <fstream>

namespace edcnn {

LayerBank identity_bank(const NetworkSpec& spec) {
  spec.validate();
  LayerBank bank;
  for (int l = 1; l <= spec.kappa; ++l) {
    if (spec.m[l] != spec.m[l - 1])
      throw PreconditionError("identity_bank: needs m_l == m_{l-1}");
    LayerFilters L;
    L.enc = FilterTensor(spec.r, spec.q[l - 1], spec.q[l]);
    L.dec = FilterTensor(spec.r, spec.q[l - 1], spec.q[l]);
    for (Index a = 0; a < std::min(spec.q[l - 1], spec.q[l]); ++a) {
      L.enc.tap(a, a)(0) = 1.0;
      L.dec.tap(a, a)(0) = 1.0;
    }
    L.pool = MatrixXd::Identity(spec.m[l - 1], spec.m[l]);
    L.unpool = L.pool;
    bank.layers.push_back(std::move(L));
  }
  return bank;
}

LayerBank random_bank(const NetworkSpec& spec, const RandomBankOptions& options) {
  spec.validate();
  LayerBank bank;
  for (int l = 1; l <= spec.kappa; ++l) {
    Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(l)));
    const Index q_in = spec.q[l - 1];
    const Index q_out = spec.q[l];
    const double sd = options.scale / std::sqrt(static_cast<double>(spec.r * q_in));
    LayerFilters L;
    L.enc = FilterTensor(spec.r, random_gaussian(spec.r * q_in, q_out, rng) * sd);
    MatrixXd dec = random_gaussian(spec.r * q_in, q_out, rng) * sd;
    if (options.positive_decoder) dec = dec.cwiseAbs();
    L.dec = FilterTensor(spec.r, std::move(dec));

    const Index m_in = spec.m[l - 1];
    const Index m_out = spec.m[l];
    const RandomPooling pooling = options.pooling.value_or(
        m_in == m_out ? RandomPooling::identity : RandomPooling::gaussian);
    if (pooling == RandomPooling::identity) {
      if (m_in != m_out) throw PreconditionError("random_bank: identity pooling needs m_l == m_{l-1}");
      L.pool = MatrixXd::Identity(m_in, m_out);
      L.unpool = L.pool;
    } else {
      const double ps = 1.0 / std::sqrt(static_cast<double>(m_in));
      L.pool = random_gaussian(m_in, m_out, rng) * ps;
      L.unpool = random_gaussian(m_in, m_out, rng) * ps;
      if (options.positive_decoder) L.unpool = L.unpool.cwiseAbs();
    }
    bank.layers.push_back(std::move(L));
  }
  return bank;
}

Json matrix_to_json(const MatrixXd& A) {
  Json data = Json::array();
  for (Index i = 0; i < A.rows(); ++i) {
    Json row = Json::array();
    for (Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    data.push_back(std::move(row));
  }
  Json out;
  out["shape"] = {A.rows(), A.cols()};
  out["data"] = std::move(data);
  return out;
}

MatrixXd matrix_from_json(const Json& j) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  if (shape.size() != 2) throw DimensionError("matrix JSON: shape must have two entries");
  const Json& data = j.at("data");
  if (static_cast<Index>(data.size()) != shape[0])
    throw DimensionError("matrix JSON: row count does not match shape");
  MatrixXd A(shape[0], shape[1]);
  for (Index i = 0; i < shape[0]; ++i) {
    if (static_cast<Index>(data[i].size()) != shape[1])
      throw DimensionError("matrix JSON: column count does not match shape");
    for (Index k = 0; k < shape[1]; ++k) A(i, k) = data[i][k].get<double>();
  }
  return A;
}

Json vector_to_json(const VectorXd& v) {
  Json out = Json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

VectorXd vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
}

namespace {

Json filters_to_json(const FilterTensor& f) {
  Json data = Json::array();
  for (Index a = 0; a < f.in_channels(); ++a) {
    Json row = Json::array();
    for (Index b = 0; b < f.out_channels(); ++b) row.push_back(vector_to_json(f.tap(a, b)));
    data.push_back(std::move(row));
  }
  Json out;
  out["shape"] = {f.in_channels(), f.out_channels(), f.taps};
  out["data"] = std::move(data);
  return out;
}

FilterTensor filters_from_json(const Json& j) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  if (shape.size() != 3) throw DimensionError("filter JSON: shape must have three entries");
  FilterTensor f(shape[2], shape[0], shape[1]);
  const Json& data = j.at("data");
  if (static_cast<Index>(data.size()) != shape[0])
    throw DimensionError("filter JSON: input-channel count does not match shape");
  for (Index a = 0; a < shape[0]; ++a) {
    if (static_cast<Index>(data[a].size()) != shape[1])
      throw DimensionError("filter JSON: output-channel count does not match shape");
    for (Index b = 0; b < shape[1]; ++b) {
      const VectorXd taps = vector_from_json(data[a][b]);
      if (taps.size() != shape[2]) throw DimensionError("filter JSON: tap count does not match shape");
      f.tap(a, b) = taps;
    }
  }
  return f;
}

}  // namespace

Json spec_to_json(const NetworkSpec& spec) {
  Json out;
  out["kappa"] = spec.kappa;
  out["r"] = spec.r;
  out["q"] = spec.q;
  out["m"] = spec.m;
  out["skip"] = spec.skip;
  out["nonlinearity"] = to_string(spec.nonlinearity);
  return out;
}

NetworkSpec spec_from_json(const Json& j) {
  NetworkSpec spec;
  spec.kappa = j.at("kappa").get<int>();
  spec.r = j.at("r").get<int>();
  spec.q = j.at("q").get<std::vector<Index>>();
  spec.m = j.at("m").get<std::vector<Index>>();
  spec.skip = j.value("skip", false);
  const std::string nl = j.value("nonlinearity", std::string("relu"));
  if (nl == "relu") {
    spec.nonlinearity = Nonlinearity::relu;
  } else if (nl == "none") {
    spec.nonlinearity = Nonlinearity::none;
  } else {
    throw std::invalid_argument("spec.nonlinearity: expected \"relu\" or \"none\", got \"" + nl + "\"");
  }
  spec.validate();
  return spec;
}

Json bank_to_json(const NetworkSpec& spec, const LayerBank& bank, std::optional<std::uint64_t> seed) {
  bank.validate(spec);
  Json out;
  out["format"] = "edcnn.layer_bank";
  out["version"] = 1;
  out["seed"] = seed ? Json(*seed) : Json(nullptr);
  out["spec"] = spec_to_json(spec);
  Json layers = Json::array();
  for (int l = 1; l <= spec.kappa; ++l) {
    const auto& L = bank.layer(l);
    Json lj;
    lj["layer"] = l;
    lj["enc_filters"] = filters_to_json(L.enc);
    lj["dec_filters"] = filters_to_json(L.dec);
    lj["pool"] = matrix_to_json(L.pool);
    lj["unpool"] = matrix_to_json(L.unpool);
    layers.push_back(std::move(lj));
  }
  out["layers"] = std::move(layers);
  return out;
}

LoadedBank bank_from_json(const Json& j) {
  if (j.value("format", std::string()) != "edcnn.layer_bank")
    throw std::invalid_argument("bank JSON: \"format\" must be \"edcnn.layer_bank\"");
  LoadedBank out;
  out.spec = spec_from_json(j.at("spec"));
  if (j.contains("seed") && !j.at("seed").is_null()) out.seed = j.at("seed").get<std::uint64_t>();
  for (const Json& lj : j.at("layers")) {
    LayerFilters L;
    L.enc = filters_from_json(lj.at("enc_filters"));
    L.dec = filters_from_json(lj.at("dec_filters"));
    L.pool = matrix_from_json(lj.at("pool"));
    L.unpool = matrix_from_json(lj.at("unpool"));
    out.bank.layers.push_back(std::move(L));
  }
  out.bank.validate(out.spec);
  return out;
}

void save_bank(const std::filesystem::path& path, const NetworkSpec& spec, const LayerBank& bank,
               std::optional<std::uint64_t> seed) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << bank_to_json(spec, bank, seed).dump(2) << '\n';
}

LoadedBank load_bank(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return bank_from_json(Json::parse(is));
}

}  // namespace edcnn
