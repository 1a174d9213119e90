#include "edcnn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace edcnn {

const char* to_string(BankSourceKind k) {
  switch (k) {
    case BankSourceKind::random: return "random";
    case BankSourceKind::file: return "file";
    default: return "frame_factory";
  }
}

const char* to_string(TargetKind k) {
  switch (k) {
    case TargetKind::self: return "self";
    case TargetKind::input: return "input";
    default: return "random";
  }
}

namespace {

// Field-checked view of one JSON object; unknown keys are rejected by finish().
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return require<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    used_.insert(key);
    if (!has(key)) throw ConfigError(field(key), "missing required field");
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
          throw ConfigError(field(key), "expected a non-negative integer");
      }
    }
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  Reader child(const std::string& key) {
    used_.insert(key);
    return Reader(j_.at(key), field(key));
  }

  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename Enum>
Enum parse_enum(const std::string& field, const std::string& value,
                std::initializer_list<std::pair<const char*, Enum>> options) {
  std::string allowed;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    allowed += allowed.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(field, "unrecognized value \"" + value + "\" (expected one of " + allowed + ")");
}

std::vector<Index> index_list(Reader& r, const std::string& key) {
  const Json& v = r.raw(key);
  if (!v.is_array()) throw ConfigError(r.field(key), "expected an array of integers");
  std::vector<Index> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer())
      throw ConfigError(r.field(key) + "[" + std::to_string(i) + "]", "expected an integer");
    out.push_back(v[i].get<Index>());
  }
  return out;
}

NetworkSpec parse_network(Reader r) {
  NetworkSpec spec;
  spec.kappa = r.require<int>("kappa");
  spec.r = r.require<int>("r");
  spec.q = index_list(r, "q");
  spec.m = index_list(r, "m");
  spec.skip = r.get<bool>("skip", false);
  spec.nonlinearity = parse_enum<Nonlinearity>(
      r.field("nonlinearity"), r.get<std::string>("nonlinearity", "relu"),
      {{"relu", Nonlinearity::relu}, {"none", Nonlinearity::none}});
  r.finish();
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError("network", e.what());
  }
  return spec;
}

bool needs_sampler(const std::vector<std::string>& analyses) {
  for (const auto& a : analyses)
    if (a == "reconstruct" || a == "regions" || a == "lipschitz" || a == "jacobian") return true;
  return false;
}

bool needs_data(const std::vector<std::string>& analyses) {
  for (const auto& a : analyses)
    if (a == "landscape" || a == "train") return true;
  return false;
}

// Line and column of a byte offset, for parse diagnostics.
std::string locate(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

ExperimentConfig config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  Reader root(j, "");
  const bool has_seed = root.has("seed");
  c.seed = root.get<std::uint64_t>("seed", 0);
  c.enforce = root.get<bool>("enforce", false);
  c.output_dir = root.get<std::string>("output_dir", "");

  // Analyses first: they decide which seeds are required.
  {
    const Json& a = root.has("analyses") ? root.raw("analyses") : Json::array();
    if (!a.is_array() || a.empty())
      throw ConfigError("analyses", "expected a non-empty array of analysis names");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string field = "analyses[" + std::to_string(i) + "]";
      if (!a[i].is_string()) throw ConfigError(field, "expected a string");
      const auto name = a[i].get<std::string>();
      const auto& known = analysis_names();
      if (std::find(known.begin(), known.end(), name) == known.end())
        throw ConfigError(field, "unrecognized analysis \"" + name + "\"");
      if (std::find(c.analyses.begin(), c.analyses.end(), name) != c.analyses.end())
        throw ConfigError(field, "analysis \"" + name + "\" listed twice");
      c.analyses.push_back(name);
    }
  }

  auto component = [&](Reader& r, const std::string& name) -> std::uint64_t {
    if (r.has("seed")) return r.require<std::uint64_t>("seed");
    if (!has_seed)
      throw ConfigError("seed", "a global seed is required by the randomized component \"" + name +
                                    "\"");
    return c.component_seed(name);
  };

  if (!root.has("bank")) throw ConfigError("bank", "missing required field");
  Reader bank = root.child("bank");
  c.bank.kind = parse_enum<BankSourceKind>(bank.field("source"), bank.require<std::string>("source"),
                                           {{"frame_factory", BankSourceKind::frame_factory},
                                            {"random", BankSourceKind::random},
                                            {"file", BankSourceKind::file}});

  std::optional<NetworkSpec> spec;
  if (root.has("network")) spec = parse_network(root.child("network"));

  switch (c.bank.kind) {
    case BankSourceKind::frame_factory: {
      c.bank.frame.alpha = bank.get<double>("alpha", 1.0);
      if (!(c.bank.frame.alpha > 0.0)) throw ConfigError(bank.field("alpha"), "must be > 0");
      c.bank.frame.pooling = parse_enum<PoolingKind>(
          bank.field("pooling"), bank.get<std::string>("pooling", "identity"),
          {{"identity", PoolingKind::identity}, {"orthogonal", PoolingKind::orthogonal}});
      c.bank.frame.seed = component(bank, "bank");
      break;
    }
    case BankSourceKind::random: {
      c.bank.random.scale = bank.get<double>("scale", 1.0);
      if (bank.has("pooling"))
        c.bank.random.pooling = parse_enum<RandomPooling>(
            bank.field("pooling"), bank.require<std::string>("pooling"),
            {{"identity", RandomPooling::identity}, {"gaussian", RandomPooling::gaussian}});
      c.bank.random.positive_decoder = bank.get<bool>("positive_decoder", false);
      c.bank.random.seed = component(bank, "bank");
      break;
    }
    case BankSourceKind::file: {
      c.bank.path = bank.require<std::string>("path");
      std::filesystem::path p(c.bank.path);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      if (!std::filesystem::exists(p))
        throw ConfigError(bank.field("path"), "file not found: " + p.string());
      c.bank.path = p.string();
      LoadedBank loaded;
      try {
        loaded = load_bank(p);
      } catch (const std::exception& e) {
        throw ConfigError(bank.field("path"), e.what());
      }
      if (spec && spec_to_json(*spec) != spec_to_json(loaded.spec))
        throw ConfigError("network", "does not match the spec stored in " + p.string());
      spec = loaded.spec;
      break;
    }
  }
  // Frame constants are reported against alpha for any bank source.
  if (c.bank.kind != BankSourceKind::frame_factory) c.bank.frame.alpha = bank.get<double>("alpha", 1.0);
  bank.finish();
  if (!spec) throw ConfigError("network", "missing required field");
  c.spec = *spec;
  c.bank.frame.mode = c.spec.skip ? FrameMode::skip : FrameMode::no_skip;
  if (c.bank.kind == BankSourceKind::frame_factory) {
    try {
      c.spec.validate_frame_mode();
      if (c.bank.frame.pooling == PoolingKind::identity) {
        for (int l = 1; l <= c.spec.kappa; ++l)
          if (c.spec.m[l] != c.spec.m[l - 1])
            throw PreconditionError("identity pooling needs m_l == m_{l-1}");
      } else {
        for (int l = 1; l <= c.spec.kappa; ++l)
          if (c.spec.m[l] < c.spec.m[l - 1])
            throw PreconditionError("frame pooling requires non-contracting dims");
      }
    } catch (const std::exception& e) {
      throw ConfigError("network", e.what());
    }
  }

  if (root.has("sampler") || needs_sampler(c.analyses)) {
    const Json empty = Json::object();
    Reader s = root.has("sampler") ? root.child("sampler") : Reader(empty, "sampler");
    c.sampler.count = s.get<std::uint64_t>("count", 1000);
    if (c.sampler.count == 0) throw ConfigError(s.field("count"), "must be >= 1");
    c.sampler.distribution = parse_enum<SampleDistribution>(
        s.field("distribution"), s.get<std::string>("distribution", "gaussian"),
        {{"gaussian", SampleDistribution::gaussian}, {"sphere", SampleDistribution::sphere}});
    c.sampler.seed = component(s, "sampler");
    s.finish();
  }

  if (root.has("data") || needs_data(c.analyses)) {
    const Json empty = Json::object();
    Reader d = root.has("data") ? root.child("data") : Reader(empty, "data");
    c.data.samples = d.get<Index>("samples", 4);
    if (c.data.samples < 1) throw ConfigError(d.field("samples"), "must be >= 1");
    c.data.targets = parse_enum<TargetKind>(
        d.field("targets"), d.get<std::string>("targets", "random"),
        {{"random", TargetKind::random}, {"self", TargetKind::self}, {"input", TargetKind::input}});
    c.data.seed = component(d, "data");
    d.finish();
  }

  if (root.has("jacobian")) {
    Reader jr = root.child("jacobian");
    c.jacobian.points = jr.get<Index>("points", c.jacobian.points);
    c.jacobian.step = jr.get<double>("step", c.jacobian.step);
    if (c.jacobian.points < 1) throw ConfigError(jr.field("points"), "must be >= 1");
    if (!(c.jacobian.step > 0.0)) throw ConfigError(jr.field("step"), "must be > 0");
    jr.finish();
  }

  if (root.has("train")) {
    Reader t = root.child("train");
    c.train.step_size = t.get<double>("step_size", c.train.step_size);
    c.train.iterations = t.get<int>("iterations", c.train.iterations);
    c.train.checkpoint_every = t.get<int>("checkpoint_every", c.train.checkpoint_every);
    c.train.armijo = t.get<double>("armijo", c.train.armijo);
    c.train.target_loss = t.get<double>("target_loss", c.train.target_loss);
    if (!(c.train.step_size > 0.0)) throw ConfigError(t.field("step_size"), "must be > 0");
    if (c.train.iterations < 0) throw ConfigError(t.field("iterations"), "must be >= 0");
    if (c.train.checkpoint_every < 0) throw ConfigError(t.field("checkpoint_every"), "must be >= 0");
    if (!(c.train.armijo > 0.0 && c.train.armijo < 1.0))
      throw ConfigError(t.field("armijo"), "must lie in (0, 1)");
    t.finish();
  }
  c.train.seed = c.data.seed;

  if (root.has("tolerances")) {
    Reader t = root.child("tolerances");
    auto& tol = c.tolerances;
    for (auto [key, slot] : std::initializer_list<std::pair<const char*, double*>>{
             {"frames", &tol.frames},
             {"reconstruction", &tol.reconstruction},
             {"identity", &tol.identity},
             {"lipschitz_slack", &tol.lipschitz_slack},
             {"jacobian", &tol.jacobian},
             {"gradient", &tol.gradient},
             {"positive", &tol.positive}}) {
      *slot = t.get<double>(key, *slot);
      if (!(*slot >= 0.0)) throw ConfigError(t.field(key), "must be >= 0");
    }
    t.finish();
  }
  root.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", path.string() + ": " + locate(text, e.byte == 0 ? 0 : e.byte - 1) +
                              ": malformed JSON (" + e.what() + ")");
  }
  return config_from_json(j, path.parent_path());
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["enforce"] = c.enforce;
  j["network"] = spec_to_json(c.spec);
  Json bank;
  bank["source"] = to_string(c.bank.kind);
  bank["alpha"] = c.bank.frame.alpha;
  switch (c.bank.kind) {
    case BankSourceKind::frame_factory:
      bank["pooling"] = to_string(c.bank.frame.pooling);
      bank["seed"] = c.bank.frame.seed;
      break;
    case BankSourceKind::random:
      bank["scale"] = c.bank.random.scale;
      bank["pooling"] = c.bank.random.pooling
                            ? (*c.bank.random.pooling == RandomPooling::gaussian ? "gaussian"
                                                                                  : "identity")
                            : "auto";
      bank["positive_decoder"] = c.bank.random.positive_decoder;
      bank["seed"] = c.bank.random.seed;
      break;
    case BankSourceKind::file:
      // Only the file name: the echo must not depend on where the run happens.
      bank["path"] = std::filesystem::path(c.bank.path).filename().string();
      break;
  }
  j["bank"] = std::move(bank);
  j["analyses"] = c.analyses;
  j["sampler"] = {{"count", c.sampler.count},
                  {"distribution", to_string(c.sampler.distribution)},
                  {"seed", c.sampler.seed}};
  j["data"] = {{"samples", c.data.samples}, {"targets", to_string(c.data.targets)}, {"seed", c.data.seed}};
  j["jacobian"] = {{"points", c.jacobian.points}, {"step", c.jacobian.step}};
  j["train"] = {{"step_size", c.train.step_size},
                {"iterations", c.train.iterations},
                {"checkpoint_every", c.train.checkpoint_every},
                {"armijo", c.train.armijo},
                {"target_loss", c.train.target_loss}};
  const auto& t = c.tolerances;
  j["tolerances"] = {{"frames", t.frames},         {"reconstruction", t.reconstruction},
                     {"identity", t.identity},     {"lipschitz_slack", t.lipschitz_slack},
                     {"jacobian", t.jacobian},     {"gradient", t.gradient},
                     {"positive", t.positive}};
  return j;
}

LayerBank build_bank(const ExperimentConfig& c) {
  switch (c.bank.kind) {
    case BankSourceKind::random: return random_bank(c.spec, c.bank.random);
    case BankSourceKind::file: return load_bank(c.bank.path).bank;
    default: return make_frame_bank(c.spec, c.bank.frame);
  }
}

namespace {

struct Context {
  const ExperimentConfig& config;
  LayerBank bank;
  Network net;
  std::optional<RegionCensus> census;
  std::vector<std::string>& failures;

  const RegionCensus& get_census() {
    if (!census) census = region_census(net, config.sampler);
    return *census;
  }

  void enforce(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double max_abs(const MatrixXd& A) { return A.size() == 0 ? 0.0 : A.cwiseAbs().maxCoeff(); }

Json run_frames(Context& ctx) {
  const auto& c = ctx.config;
  const double alpha = c.bank.frame.alpha;
  const FrameMode mode = c.bank.frame.mode;
  Json out;
  out["alpha"] = alpha;
  out["mode"] = to_string(mode);
  out["filter_constant"] = filter_frame_constant(c.spec.r, alpha, mode);
  Json layers = Json::array();
  double worst = 0.0;
  for (const auto& r : frame_residual(c.spec, ctx.bank, alpha, mode)) {
    layers.push_back(to_json(r, mode));
    worst = std::max({worst, r.pooling_residual, r.filter_residual, r.layer_identity_residual});
    if (mode == FrameMode::skip)
      worst = std::max({worst, r.pooled_term_residual, r.skip_term_residual});
  }
  out["layers"] = std::move(layers);
  out["max_residual"] = worst;
  const FrameBasis basis = build_frame_basis(c.spec, ctx.bank);
  const MatrixXd recon = basis.B_tilde * basis.B.transpose();
  const double basis_residual = max_abs(recon - MatrixXd::Identity(recon.rows(), recon.cols()));
  out["B_tilde_B_T_identity_residual"] = basis_residual;
  double cascade_dev = 0.0;
  try {
    const CascadeReport cr = cascade_filter_check(c.spec, ctx.bank);
    out["cascade"] = to_json(cr);
    cascade_dev = cr.max_deviation;
  } catch (const PreconditionError& e) {
    out["cascade"] = {{"skipped", e.what()}};
  }
  const double tol = c.tolerances.frames;
  const bool ok = worst <= tol && basis_residual <= tol && cascade_dev <= tol;
  out["ok"] = ok;
  ctx.enforce(worst <= tol, "frames: layer residual " + fmt(worst) + " exceeds " + fmt(tol));
  ctx.enforce(basis_residual <= tol,
              "frames: B_tilde B^T identity residual " + fmt(basis_residual) + " exceeds " + fmt(tol));
  ctx.enforce(cascade_dev <= tol, "frames: cascade deviation " + fmt(cascade_dev) + " exceeds " + fmt(tol));
  return out;
}

Json run_reconstruct(Context& ctx) {
  const auto& c = ctx.config;
  NetworkSpec linear = c.spec;
  linear.nonlinearity = Nonlinearity::none;
  const Network net = build_network(linear, ctx.bank);
  double worst = 0.0, total = 0.0;
  for (std::uint64_t i = 0; i < c.sampler.count; ++i) {
    const VectorXd x = sample_input(linear.d(0), c.sampler, i);
    const double e = relative_error(forward(net, x).output(), x);
    worst = std::max(worst, e);
    total += e;
  }
  const bool ok = worst <= c.tolerances.reconstruction;
  ctx.enforce(ok, "reconstruct: relative error " + fmt(worst) + " exceeds " +
                      fmt(c.tolerances.reconstruction));
  return {{"nonlinearity", "none"},
          {"samples", c.sampler.count},
          {"max_relative_error", worst},
          {"mean_relative_error", total / static_cast<double>(c.sampler.count)},
          {"ok", ok}};
}

Json run_regions(Context& ctx, std::map<std::string, std::string>& side) {
  const auto& c = ctx.config;
  const RegionCensus& census = ctx.get_census();
  Json out = to_json(census, true);
  const bool identity_ok = census.max_identity_residual <= c.tolerances.identity;
  out["ok"] = identity_ok && census.within_bound();
  ctx.enforce(identity_ok, "regions: identity residual " + fmt(census.max_identity_residual) +
                               " exceeds " + fmt(c.tolerances.identity));
  ctx.enforce(census.within_bound(), "regions: " + std::to_string(census.distinct()) +
                                         " distinct patterns exceed N_rep = " +
                                         census.nrep.to_string());

  std::ostringstream csv, plot;
  csv << std::setprecision(17) << "pattern_hash,count,K_p\n";
  plot << std::setprecision(17) << "region_index,K_p\n";
  for (std::size_t i = 0; i < census.regions.size(); ++i) {
    const auto& r = census.regions[i];
    csv << r.hash << ',' << r.count << ',' << r.local_lipschitz << '\n';
    plot << i << ',' << r.local_lipschitz << '\n';
  }
  side["regions.csv"] = csv.str();
  side["regions_plot.csv"] = plot.str();
  return out;
}

Json run_lipschitz(Context& ctx) {
  const auto& c = ctx.config;
  const RegionCensus& census = ctx.get_census();
  // Regions are convex, so F is linear on the segment between two samples of one region.
  std::vector<std::optional<std::uint64_t>> last(census.regions.size());
  std::uint64_t pairs = 0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::uint64_t i = 0; i < census.samples; ++i) {
    const std::size_t r = census.region_of_sample[i];
    if (last[r]) {
      const VectorXd x1 = census.inputs.col(static_cast<Index>(*last[r]));
      const VectorXd x2 = census.inputs.col(static_cast<Index>(i));
      const double lhs = (forward(ctx.net, x1).output() - forward(ctx.net, x2).output()).norm();
      const double rhs = census.regions[r].local_lipschitz * (x1 - x2).norm();
      worst = std::max(worst, lhs - rhs);
      ++pairs;
    }
    last[r] = i;
  }
  const bool ok = pairs == 0 || worst <= c.tolerances.lipschitz_slack;
  ctx.enforce(ok, "lipschitz: pair excess " + fmt(worst) + " exceeds " + fmt(c.tolerances.lipschitz_slack));
  Json out;
  out["regions_sampled"] = census.distinct();
  out["K_global_lower_bound"] = lipschitz_global(census);
  out["exact"] = c.spec.nonlinearity == Nonlinearity::none;
  out["pairs_checked"] = pairs;
  out["max_pair_excess"] = pairs == 0 ? 0.0 : worst;
  out["ok"] = ok;
  return out;
}

Json run_jacobian(Context& ctx) {
  const auto& c = ctx.config;
  const double h = c.jacobian.step;
  const Index d0 = c.spec.d(0);
  SamplerConfig sampler = c.sampler;
  sampler.seed = derive_seed(c.sampler.seed, "jacobian");
  const std::uint64_t max_tries = static_cast<std::uint64_t>(c.jacobian.points) * 20;
  Index accepted = 0;
  std::uint64_t skipped = 0;
  double worst = 0.0;
  for (std::uint64_t i = 0; i < max_tries && accepted < c.jacobian.points; ++i) {
    const VectorXd x = sample_input(d0, sampler, i);
    MatrixXd A;
    try {
      A = jacobian_analytic(ctx.net, x, 100.0 * h);
    } catch (const KinkMarginError&) {
      ++skipped;
      continue;
    }
    const std::string key = extract_pattern(ctx.net, x).key();
    MatrixXd fd(d0, d0);
    bool same_region = true;
    for (Index j = 0; j < d0 && same_region; ++j) {
      const VectorXd e = VectorXd::Unit(d0, j) * h;
      const VectorXd xp = x + e, xm = x - e;
      same_region = extract_pattern(ctx.net, xp).key() == key && extract_pattern(ctx.net, xm).key() == key;
      fd.col(j) = (forward(ctx.net, xp).output() - forward(ctx.net, xm).output()) / (2.0 * h);
    }
    if (!same_region) {
      ++skipped;
      continue;
    }
    const double scale = A.norm();
    worst = std::max(worst, scale > 0.0 ? (A - fd).norm() / scale : (A - fd).norm());
    ++accepted;
  }
  const bool ok = accepted > 0 && worst <= c.tolerances.jacobian;
  ctx.enforce(accepted > 0, "jacobian: no kink-margin-safe points found");
  ctx.enforce(worst <= c.tolerances.jacobian,
              "jacobian: relative error " + fmt(worst) + " exceeds " + fmt(c.tolerances.jacobian));
  return {{"points", accepted},
          {"skipped_near_kink", skipped},
          {"step", h},
          {"max_relative_frobenius_error", worst},
          {"ok", ok}};
}

TrainingSet make_data(const ExperimentConfig& c, const Network& net) {
  TrainingSet data = random_training_set(c.spec, c.data.samples, c.data.seed);
  if (c.data.targets == TargetKind::input) data.Y = data.X;
  if (c.data.targets == TargetKind::self)
    for (Index i = 0; i < data.size(); ++i) data.Y.col(i) = forward(net, VectorXd(data.X.col(i))).output();
  return data;
}

// Central differences of the loss in up to 256 entries of one free matrix,
// step h0 (1 + |entry|).
double fd_matrix_error(Network net, const TrainingSet& data, int l, bool skip_tilde,
                       const MatrixXd& analytic, double h0) {
  MatrixXd& W = skip_tilde ? *net.layer(l).S_tilde : net.layer(l).E;
  const Index n = W.size();
  const Index stride = std::max<Index>(1, n / 256);
  double num = 0.0, den = 0.0;
  for (Index k = 0; k < n; k += stride) {
    const double orig = W.data()[k];
    const double h = h0 * (1.0 + std::abs(orig));
    W.data()[k] = orig + h;
    const double lp = loss(net, data);
    W.data()[k] = orig - h;
    const double lm = loss(net, data);
    W.data()[k] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    num += (fd - analytic.data()[k]) * (fd - analytic.data()[k]);
    den += analytic.data()[k] * analytic.data()[k];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

Json run_landscape(Context& ctx) {
  const auto& c = ctx.config;
  const auto& spec = c.spec;
  const TrainingSet data = make_data(c, ctx.net);
  const MatrixGradients grads = matrix_gradients(ctx.net, data);
  const double margin = training_kink_margin(ctx.net, data);
  const double tol = c.tolerances.gradient;
  Json out;
  out["samples"] = data.size();
  out["targets"] = to_string(c.data.targets);
  out["loss"] = loss(ctx.net, data);
  out["kink_margin"] = std::isfinite(margin) ? Json(margin) : Json(nullptr);

  Json certs = Json::array();
  double kron_gap = 0.0, fd_err = 0.0;
  bool bounds_ok = true;
  auto rel = [](const MatrixXd& a, const MatrixXd& b) {
    const double s = b.norm();
    return s > 0.0 ? (a - b).norm() / s : (a - b).norm();
  };
  if (spec.skip) {
    for (int l = 1; l <= spec.kappa; ++l) {
      const BoundCertificate cert = certify_bounds_skip(ctx.net, data, l);
      if (cert.applicable()) bounds_ok = bounds_ok && cert.holds;
      certs.push_back(to_json(cert));
      const MatrixXd G = grad_skip_analytic(ctx.net, data, l, 0.0);
      kron_gap = std::max(kron_gap, rel(G, grads.S_tilde[l - 1]));
      fd_err = std::max(fd_err, fd_matrix_error(ctx.net, data, l, true, G, 1e-6));
    }
  }
  const BoundCertificate enc = certify_bounds_enc(ctx.net, data);
  if (enc.applicable()) bounds_ok = bounds_ok && enc.holds;
  certs.push_back(to_json(enc));
  const MatrixXd GE = grad_enc_analytic(ctx.net, data, 0.0);
  kron_gap = std::max(kron_gap, rel(GE, grads.E[spec.kappa - 1]));
  fd_err = std::max(fd_err, fd_matrix_error(ctx.net, data, spec.kappa, false, GE, 1e-6));

  out["certificates"] = std::move(certs);
  out["kronecker_vs_backprop"] = kron_gap;
  out["finite_difference_relative_error"] = fd_err;
  bool t2_ok = true;
  if (spec.skip) {
    const Theorem2Report t2 = check_theorem2(ctx.net, data, c.tolerances.positive);
    t2_ok = t2.ok();
    out["theorem2"] = to_json(t2);
  }
  ctx.enforce(bounds_ok, "landscape: an applicable gradient bound certificate failed");
  ctx.enforce(kron_gap <= tol, "landscape: Kronecker gradient deviates from backprop by " + fmt(kron_gap));
  ctx.enforce(fd_err <= tol, "landscape: finite-difference gradient error " + fmt(fd_err) +
                                 " exceeds " + fmt(tol));
  ctx.enforce(t2_ok, "landscape: nonzero-gradient check failed on a layer meeting its rank conditions");
  out["ok"] = bounds_ok && kron_gap <= tol && fd_err <= tol && t2_ok;
  return out;
}

Json run_train(Context& ctx, std::map<std::string, std::string>& side, std::optional<Json>& trained) {
  const auto& c = ctx.config;
  const TrainingSet data = make_data(c, ctx.net);
  const TrainResult res = train_gd(c.spec, ctx.bank, data, c.train);
  Json out = to_json(res);
  out["ok"] = !res.diverged;
  ctx.enforce(!res.diverged, "train: " + res.diagnostic);
  side["loss_curve.csv"] = loss_curve_csv(res);
  trained = bank_to_json(c.spec, res.bank, c.train.seed);
  return out;
}

Json network_summary(const NetworkSpec& spec) {
  Json out;
  std::vector<Index> d, s;
  for (int l = 0; l <= spec.kappa; ++l) d.push_back(spec.d(l));
  if (spec.skip)
    for (int l = 1; l <= spec.kappa; ++l) s.push_back(spec.s(l));
  out["d"] = d;
  out["s"] = s;
  out["feature_dim"] = spec.feature_dim();
  out["N_rep"] = nrep_bound(spec).to_string();
  out["raw_mask_bits"] = raw_mask_bits(spec);
  Json diags = Json::array();
  for (const auto& e : check_embedding_dims(spec)) diags.push_back({{"layer", e.layer}, {"message", e.message}});
  out["embedding_diagnostics"] = std::move(diags);
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  ExperimentResult result;
  Json timings;
  LayerBank bank = build_bank(config);
  Network net = build_network(config.spec, bank);
  Context ctx{config, std::move(bank), std::move(net), std::nullopt, result.failures};

  Json& rep = result.report;
  rep["toolkit"] = "edcnn";
  rep["version"] = EDCNN_VERSION;
  rep["config"] = config_to_json(config);
  rep["network"] = network_summary(config.spec);
  Json analyses;
  for (const auto& name : config.analyses) {
    const auto t0 = Clock::now();
    if (name == "frames") analyses[name] = run_frames(ctx);
    else if (name == "reconstruct") analyses[name] = run_reconstruct(ctx);
    else if (name == "regions") analyses[name] = run_regions(ctx, result.side_files);
    else if (name == "lipschitz") analyses[name] = run_lipschitz(ctx);
    else if (name == "jacobian") analyses[name] = run_jacobian(ctx);
    else if (name == "landscape") analyses[name] = run_landscape(ctx);
    else if (name == "train") analyses[name] = run_train(ctx, result.side_files, result.trained_bank);
    timings[name] = std::chrono::duration<double>(Clock::now() - t0).count();
  }
  rep["analyses"] = std::move(analyses);
  rep["status"] = {{"ok", result.ok()}, {"enforce", config.enforce}, {"failures", result.failures}};
  timings["total"] = std::chrono::duration<double>(Clock::now() - start).count();
  rep["timings"] = std::move(timings);
  return result;
}

std::filesystem::path output_directory(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("EDCNN_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return "edcnn_out";
}

void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write("report.json", result.report.dump(2) + "\n");
  for (const auto& [name, text] : result.side_files) write(name, text);
  if (result.trained_bank) write("trained_bank.json", result.trained_bank->dump(2) + "\n");
}

Json strip_timings(const Json& report) {
  Json out = report;
  out.erase("timings");
  return out;
}

namespace {

void flatten(const Json& j, const std::string& path, std::vector<std::pair<std::string, std::string>>& rows) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten(it.value(), path.empty() ? it.key() : path + "." + it.key(), rows);
  } else if (j.is_array()) {
    const bool scalars = std::all_of(j.begin(), j.end(), [](const Json& v) { return v.is_primitive(); });
    if (scalars && j.size() <= 16) {
      rows.emplace_back(path, j.dump());
    } else if (j.size() > 32) {
      rows.emplace_back(path, "[" + std::to_string(j.size()) + " entries]");
    } else {
      for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], path + "[" + std::to_string(i) + "]", rows);
    }
  } else if (j.is_string()) {
    rows.emplace_back(path, j.get<std::string>());
  } else {
    rows.emplace_back(path, j.dump());
  }
}

}  // namespace

std::string format_report_table(const Json& report) {
  std::vector<std::pair<std::string, std::string>> rows;
  flatten(report, "", rows);
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.first.size());
  std::ostringstream os;
  for (const auto& [k, v] : rows) os << std::left << std::setw(static_cast<int>(width) + 2) << k << v << '\n';
  return os.str();
}

}  // namespace edcnn
