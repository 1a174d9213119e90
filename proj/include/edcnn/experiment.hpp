#pragma once

// Experiment configuration, orchestration and report emission.
//
// A config is a JSON object; see docs/config_schema.md. `run_experiment`
// executes the requested analyses in declared order and assembles a report
// whose content depends only on the config (wall-clock timings live in a
// separate trailing "timings" block).

#include "edcnn/analysis.hpp"
#include "edcnn/bank_io.hpp"
#include "edcnn/frames.hpp"
#include "edcnn/landscape.hpp"
#include "edcnn/network.hpp"
#include "edcnn/random.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace edcnn {

/// Malformed or inconsistent configuration. `field` is a JSON path such as
/// "bank.alpha"; parse errors carry a line number instead.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class BankSourceKind { frame_factory, random, file };

const char* to_string(BankSourceKind k);

struct BankSource {
  BankSourceKind kind = BankSourceKind::frame_factory;
  FrameConfig frame;         // frame_factory
  RandomBankOptions random;  // random
  std::string path;          // file
};

enum class TargetKind { random, self, input };

const char* to_string(TargetKind k);

struct DataConfig {
  Index samples = 4;
  std::uint64_t seed = 0;
  TargetKind targets = TargetKind::random;
};

struct JacobianConfig {
  Index points = 20;
  double step = 1e-6;
};

struct Tolerances {
  double frames = 1e-10;
  double reconstruction = 1e-10;
  double identity = 1e-10;
  double lipschitz_slack = 1e-8;
  double jacobian = 1e-5;
  double gradient = 1e-5;
  double positive = 1e-12;
};

inline const std::vector<std::string>& analysis_names() {
  static const std::vector<std::string> names{"frames",   "reconstruct", "regions", "lipschitz",
                                              "jacobian", "landscape",   "train"};
  return names;
}

struct ExperimentConfig {
  NetworkSpec spec;
  BankSource bank;
  std::vector<std::string> analyses;
  SamplerConfig sampler;
  DataConfig data;
  JacobianConfig jacobian;
  TrainConfig train;
  Tolerances tolerances;
  std::string output_dir;  // empty: $EDCNN_OUTPUT_DIR, then "edcnn_out"
  std::uint64_t seed = 0;
  bool enforce = false;
  std::filesystem::path base_dir;  // resolves relative bank paths

  /// Seed of a named stochastic component.
  std::uint64_t component_seed(std::string_view name) const { return derive_seed(seed, name); }
};

/// Validating loader. Throws ConfigError.
ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical echo of a parsed config (every field, defaults filled in).
Json config_to_json(const ExperimentConfig& config);

struct ExperimentResult {
  Json report;                                // ends with a "timings" block
  std::vector<std::string> failures;          // enforced invariants that failed
  std::map<std::string, std::string> side_files;  // file name -> contents
  std::optional<Json> trained_bank;

  bool ok() const { return failures.empty(); }
  /// 0 on success, 2 when an enforced invariant failed.
  int exit_code(bool enforce) const { return enforce && !ok() ? 2 : 0; }
};

ExperimentResult run_experiment(const ExperimentConfig& config);

/// Directory the run writes to (config, then environment, then default).
std::filesystem::path output_directory(const ExperimentConfig& config);

/// Writes report.json and the CSV/JSON side files into `dir`.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir);

/// Report without its "timings" block, for determinism comparisons.
Json strip_timings(const Json& report);

/// Human-readable two-column rendering of a report.
std::string format_report_table(const Json& report);

/// Shared bank construction for configs and subcommands.
LayerBank build_bank(const ExperimentConfig& config);

}  // namespace edcnn
