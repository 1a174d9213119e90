// Command-line front end. Every subcommand assembles an experiment config and
// goes through the same loader and runner as `edcnn run <config>`.

#include "edcnn/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using edcnn::Json;

struct CommonFlags {
  std::string spec_path;
  std::string bank_path;
  std::string bank_source = "frame_factory";
  std::string mode;
  std::string pooling = "identity";
  std::string out;
  std::string targets = "random";
  double alpha = 1.0;
  double scale = 1.0;
  double step_size = 1e-2;
  std::uint64_t samples = 1000;
  std::uint64_t seed = 0;
  long long data_samples = 4;
  int iterations = 200;
  bool no_relu = false;
  bool enforce = false;
  bool positive_decoder = false;
};

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw edcnn::ConfigError("", "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw edcnn::ConfigError("", path + ": malformed JSON (" + std::string(e.what()) + ")");
  }
}

// Network used when neither --spec nor --bank is given.
Json default_spec() {
  return Json::parse(R"({"kappa": 2, "r": 2, "q": [1, 2, 4], "m": [8, 8, 8], "skip": true})");
}

Json build_config(const CommonFlags& f, const std::string& analysis) {
  Json cfg;
  cfg["seed"] = f.seed;
  cfg["enforce"] = f.enforce;
  if (!f.out.empty()) cfg["output_dir"] = f.out;
  if (f.bank_path.empty()) {
    Json spec = default_spec();
    if (!f.spec_path.empty()) {
      spec = read_json(f.spec_path);
      if (spec.contains("network")) spec = spec.at("network");
    }
    if (!f.mode.empty()) spec["skip"] = f.mode == "skip";
    if (f.no_relu) spec["nonlinearity"] = "none";
    cfg["network"] = std::move(spec);
  }
  if (!f.mode.empty() && f.mode != "skip" && f.mode != "no_skip")
    throw edcnn::ConfigError("--mode", "expected skip or no_skip");
  Json bank;
  if (!f.bank_path.empty()) {
    bank["source"] = "file";
    bank["path"] = f.bank_path;
  } else {
    bank["source"] = f.bank_source;
    if (f.bank_source == "frame_factory") bank["pooling"] = f.pooling;
    if (f.bank_source == "random") {
      bank["scale"] = f.scale;
      bank["positive_decoder"] = f.positive_decoder;
    }
  }
  bank["alpha"] = f.alpha;
  cfg["bank"] = std::move(bank);
  cfg["analyses"] = Json::array({analysis});
  cfg["sampler"] = {{"count", f.samples}};
  if (analysis == "landscape" || analysis == "train")
    cfg["data"] = {{"samples", f.data_samples}, {"targets", f.targets}};
  if (analysis == "train") cfg["train"] = {{"step_size", f.step_size}, {"iterations", f.iterations}};
  return cfg;
}

// Overrides --no-relu on a file bank: the stored spec decides otherwise.
void apply_file_overrides(edcnn::ExperimentConfig& c, const CommonFlags& f) {
  if (f.no_relu) c.spec.nonlinearity = edcnn::Nonlinearity::none;
}

int execute(const edcnn::ExperimentConfig& config, const std::string& analysis) {
  const edcnn::ExperimentResult result = edcnn::run_experiment(config);
  edcnn::write_outputs(result, edcnn::output_directory(config));
  const Json& block = result.report.at("analyses").at(analysis);
  if (analysis == "frames") {
    std::cout << edcnn::format_report_table(block);
  } else if (analysis == "reconstruct") {
    std::cout << "max relative error: " << block.at("max_relative_error").get<double>() << '\n';
  } else {
    Json shown = block;
    shown.erase("regions");  // per-region rows go to report.json and regions.csv
    std::cout << shown.dump(2) << '\n';
  }
  for (const auto& f : result.failures) std::cerr << "failed: " << f << '\n';
  return result.exit_code(config.enforce);
}

void add_common(CLI::App* sub, CommonFlags& f, bool training) {
  sub->add_option("--spec", f.spec_path, "network spec JSON (default: kappa 2, q 1-2-4, m 8, skip)");
  sub->add_option("--bank", f.bank_path, "load filters from a bank file");
  sub->add_option("--bank-source", f.bank_source, "frame_factory or random")
      ->check(CLI::IsMember({"frame_factory", "random"}));
  sub->add_option("--alpha", f.alpha, "pooling frame constant");
  sub->add_option("--mode", f.mode, "skip or no_skip (overrides the spec)")
      ->check(CLI::IsMember({"skip", "no_skip"}));
  sub->add_option("--pooling", f.pooling, "identity or orthogonal frame pooling")
      ->check(CLI::IsMember({"identity", "orthogonal"}));
  sub->add_option("--scale", f.scale, "random bank tap scale");
  sub->add_flag("--positive-decoder", f.positive_decoder, "random bank with nonnegative decoder");
  sub->add_option("--samples", f.samples, "number of sampled inputs");
  sub->add_option("--seed", f.seed, "global seed");
  sub->add_flag("--no-relu", f.no_relu, "remove the nonlinearity");
  sub->add_option("--out", f.out, "output directory");
  sub->add_flag("--enforce", f.enforce, "exit 2 when a checked invariant fails");
  if (training) {
    sub->add_option("--data-samples", f.data_samples, "training set size T");
    sub->add_option("--targets", f.targets, "random, self or input")
        ->check(CLI::IsMember({"random", "self", "input"}));
    sub->add_option("--iterations", f.iterations, "gradient-descent iterations");
    sub->add_option("--step-size", f.step_size, "initial step size");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Encoder-decoder CNN analysis toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(EDCNN_VERSION));

  std::string config_path, out_override;
  CLI::App* run = app.add_subcommand("run", "run every analysis of a config file");
  run->add_option("config", config_path, "experiment config JSON")->required();
  run->add_option("--out", out_override, "output directory");

  std::string report_path;
  CLI::App* report = app.add_subcommand("report", "print a report as a table");
  report->add_option("report", report_path, "report.json")->required();

  const std::vector<std::pair<std::string, std::string>> commands{
      {"verify-frames", "frames"},   {"reconstruct", "reconstruct"}, {"regions", "regions"},
      {"lipschitz", "lipschitz"},    {"jacobian", "jacobian"},       {"landscape", "landscape"},
      {"train", "train"}};
  CommonFlags flags;
  std::vector<std::pair<CLI::App*, std::string>> subs;
  for (const auto& [cmd, analysis] : commands) {
    CLI::App* sub = app.add_subcommand(cmd, "run the " + analysis + " analysis");
    add_common(sub, flags, analysis == "landscape" || analysis == "train");
    subs.emplace_back(sub, analysis);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) {
      edcnn::ExperimentConfig config = edcnn::load_config(config_path);
      if (!out_override.empty()) config.output_dir = out_override;
      const edcnn::ExperimentResult result = edcnn::run_experiment(config);
      const auto dir = edcnn::output_directory(config);
      edcnn::write_outputs(result, dir);
      std::cout << "report written to " << (dir / "report.json").string() << '\n';
      for (const auto& f : result.failures) std::cerr << "failed: " << f << '\n';
      return result.exit_code(config.enforce);
    }
    if (*report) {
      std::cout << edcnn::format_report_table(read_json(report_path));
      return 0;
    }
    for (const auto& [sub, analysis] : subs) {
      if (!*sub) continue;
      edcnn::ExperimentConfig config = edcnn::config_from_json(build_config(flags, analysis));
      if (!flags.bank_path.empty()) apply_file_overrides(config, flags);
      return execute(config, analysis);
    }
  } catch (const edcnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
