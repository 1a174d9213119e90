#pragma once

// LayerBank factories and JSON import/export.
//
// Bank file layout (field order is fixed on export):
// {
//   "format": "edcnn.layer_bank", "version": 1, "seed": <uint64 or null>,
//   "spec": { "kappa", "r", "q", "m", "skip", "nonlinearity" },
//   "layers": [ { "layer": l,
//                 "enc_filters": { "shape": [q_{l-1}, q_l, r], "data": [[[...]]] },
//                 "dec_filters": { ... },
//                 "pool":   { "shape": [m_{l-1}, m_l], "data": [[row], ...] },
//                 "unpool": { ... } }, ... ]
// }
// enc_filters.data[a][b] holds psi^l_{b,a}; dec_filters.data[a][b] holds psit^l_{a,b}.

#include "edcnn/network.hpp"
#include "edcnn/random.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>

namespace edcnn {

using Json = nlohmann::ordered_json;

/// Kappa layers of delta filters (psi_{b,a} = delta for a == b, zero otherwise)
/// with identity pooling. Requires m_l == m_{l-1}.
LayerBank identity_bank(const NetworkSpec& spec);

enum class RandomPooling { identity, gaussian };

struct RandomBankOptions {
  std::uint64_t seed = 0;
  double scale = 1.0;
  /// identity when m_l == m_{l-1}; gaussian otherwise unless forced.
  std::optional<RandomPooling> pooling;
  /// Draw decoder taps and unpooling entries from |N(0, 1)|.
  bool positive_decoder = false;
};

/// Gaussian filters N(0, scale^2 / (r q_{l-1})) per tap.
LayerBank random_bank(const NetworkSpec& spec, const RandomBankOptions& options);

Json matrix_to_json(const MatrixXd& A);
MatrixXd matrix_from_json(const Json& j);
Json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const Json& j);

Json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const Json& j);

Json bank_to_json(const NetworkSpec& spec, const LayerBank& bank,
                  std::optional<std::uint64_t> seed = std::nullopt);

struct LoadedBank {
  NetworkSpec spec;
  LayerBank bank;
  std::optional<std::uint64_t> seed;
};

LoadedBank bank_from_json(const Json& j);

void save_bank(const std::filesystem::path& path, const NetworkSpec& spec, const LayerBank& bank,
               std::optional<std::uint64_t> seed = std::nullopt);
LoadedBank load_bank(const std::filesystem::path& path);

}  // namespace edcnn
