#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "bae/external.hpp"
#include "bae/pipeline.hpp"
#include "bae/slice.hpp"

namespace bae::pipeline {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::polynomial: return "polynomial";
    case ModelKind::slice: return "slice";
    case ModelKind::external: return "external";
  }
  return "?";
}

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw ConfigError("unknown profile '" + s + "' (expected desk or paper)");
}

fs::path PipelineConfig::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

Eigen::Index PipelineConfig::parameter_dim() const {
  switch (model.kind) {
    case ModelKind::polynomial: return model.polynomial.order;
    case ModelKind::slice: return 2 * static_cast<Eigen::Index>(slice::default_config(4, 4).rock_count());
    case ModelKind::external: return model.external.input_dim;
  }
  return 0;
}

namespace {

// Settable physical constants of the slice analogue.
const std::map<std::string, double slice::SliceConfig::*>& slice_physics_fields() {
  static const std::map<std::string, double slice::SliceConfig::*> fields = {
      {"top_temperature", &slice::SliceConfig::top_temperature},
      {"basal_heat_flux", &slice::SliceConfig::basal_heat_flux},
      {"source_x_min", &slice::SliceConfig::source_x_min},
      {"source_x_max", &slice::SliceConfig::source_x_max},
      {"source_mass_flux", &slice::SliceConfig::source_mass_flux},
      {"source_enthalpy", &slice::SliceConfig::source_enthalpy},
      {"thermal_conductivity", &slice::SliceConfig::thermal_conductivity},
      {"porosity", &slice::SliceConfig::porosity},
      {"surface_head_slope", &slice::SliceConfig::surface_head_slope},
      {"fluid_density", &slice::SliceConfig::fluid_density},
      {"fluid_heat_capacity", &slice::SliceConfig::fluid_heat_capacity},
      {"kinematic_viscosity", &slice::SliceConfig::kinematic_viscosity},
      {"solver_tolerance", &slice::SliceConfig::solver_tolerance},
  };
  return fields;
}

// A YAML mapping whose keys are checked against the ones actually read.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) fail("", "must be a mapping");
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return node_ && node_.IsMap() && node_[key] && !node_[key].IsNull();
  }

  template <typename T>
  std::optional<T> opt(const std::string& key) {
    if (!has(key)) return std::nullopt;
    try {
      return node_[key].as<T>();
    } catch (const YAML::Exception&) {
      fail(key, "has the wrong type");
    }
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    auto v = opt<T>(key);
    return v ? *v : fallback;
  }

  template <typename T>
  T required(const std::string& key) {
    auto v = opt<T>(key);
    if (!v) fail(key, "is required");
    return *v;
  }

  /// A number or a list of numbers.
  std::vector<double> numbers(const std::string& key) {
    if (!has(key)) return {};
    const YAML::Node n = node_[key];
    try {
      if (n.IsScalar()) return {n.as<double>()};
      if (n.IsSequence()) return n.as<std::vector<double>>();
    } catch (const YAML::Exception&) {
    }
    fail(key, "must be a number or a list of numbers");
  }

  std::vector<std::string> strings(const std::string& key) {
    if (!has(key)) return {};
    const YAML::Node n = node_[key];
    try {
      if (n.IsScalar()) return {n.as<std::string>()};
      if (n.IsSequence()) return n.as<std::vector<std::string>>();
    } catch (const YAML::Exception&) {
    }
    fail(key, "must be a string or a list of strings");
  }

  Section child(const std::string& key) {
    has(key);
    return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), join(key));
  }

  YAML::Node raw(const std::string& key) {
    has(key);
    return node_ && node_.IsMap() ? node_[key] : YAML::Node();
  }

  /// Raises ConfigError for any key that was never asked for.
  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!known_.count(key)) throw ConfigError("unknown config key '" + join(key) + "'");
    }
  }

  bool present() const { return node_ && !node_.IsNull(); }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config key '" + (key.empty() ? path_ : join(key)) + "' " + what);
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> known_;
};

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void check_length(const std::vector<double>& v, Eigen::Index n, const std::string& key, bool allow_empty = false) {
  if (v.empty() && allow_empty) return;
  check(v.size() == 1 || static_cast<Eigen::Index>(v.size()) == n,
        "config key '" + key + "' must have 1 or " + std::to_string(n) + " entries, got " + std::to_string(v.size()));
  for (double x : v) check(std::isfinite(x), "config key '" + key + "' must be finite");
}

struct ProfileDefaults {
  GridSection fine, coarse;
  int walkers, steps, burn_in;
  long long q;
};

ProfileDefaults defaults_for(Profile p) {
  if (p == Profile::paper) return {{80, 100}, {16, 20}, 300, 600, 100, 1000};
  return {{40, 50}, {8, 10}, 24, 3000, 1000, 200};
}

Eigen::Index observation_dim(const PipelineConfig& cfg) {
  switch (cfg.model.kind) {
    case ModelKind::polynomial: return cfg.model.polynomial.points;
    case ModelKind::slice: return slice::default_config(4, 4).observation_count();
    case ModelKind::external: return cfg.model.external.output_dim;
  }
  return 0;
}

void validate(const PipelineConfig& cfg) {
  check(!cfg.output.empty(), "no output directory (set 'output' or pass --output)");
  check(cfg.workers >= 1, "workers must be >= 1");
  const Eigen::Index d = cfg.parameter_dim();
  const Eigen::Index m = observation_dim(cfg);

  switch (cfg.model.kind) {
    case ModelKind::polynomial: {
      const auto& p = cfg.model.polynomial;
      check(p.points >= 1 && p.order >= 1, "model.polynomial needs points >= 1 and order >= 1");
      if (!p.identical) check(p.kept >= 1 && p.kept < p.order, "model.polynomial.kept must satisfy 1 <= kept < order");
      check(p.t0 < p.t1, "model.polynomial needs t0 < t1");
      break;
    }
    case ModelKind::slice: {
      const auto& s = cfg.model.slice;
      for (const auto* g : {&s.fine, &s.coarse}) check(g->nx >= 4 && g->nz >= 4, "slice grids need nx, nz >= 4");
      for (const auto& [key, value] : s.physics) {
        check(slice_physics_fields().count(key) == 1, "unknown config key 'model.slice.physics." + key + "'");
        check(std::isfinite(value), "model.slice.physics." + key + " must be finite");
      }
      break;
    }
    case ModelKind::external: {
      const auto& e = cfg.model.external;
      check(!e.fine_command.empty() && !e.coarse_command.empty(), "model.external needs fine and coarse commands");
      check(e.input_dim >= 1 && e.output_dim >= 1, "model.external needs input_dim and output_dim >= 1");
      check(e.timeout_s > 0 && e.processes >= 1, "model.external needs timeout_s > 0 and processes >= 1");
      break;
    }
  }

  if (cfg.prior.kind == PriorSpec::Kind::gaussian) {
    check(!cfg.prior.mean.empty() && !cfg.prior.sd.empty(), "a gaussian prior needs 'mean' and 'sd'");
    check_length(cfg.prior.mean, d, "prior.mean");
    check_length(cfg.prior.sd, d, "prior.sd");
    for (double s : cfg.prior.sd) check(s > 0, "prior.sd entries must be positive");
    check(cfg.prior.lower.empty() && cfg.prior.upper.empty(), "a gaussian prior takes no 'lower'/'upper'");
  } else {
    check(!cfg.prior.lower.empty() && !cfg.prior.upper.empty(), "a uniform-box prior needs 'lower' and 'upper'");
    check_length(cfg.prior.lower, d, "prior.lower");
    check_length(cfg.prior.upper, d, "prior.upper");
    for (Eigen::Index i = 0; i < d; ++i) {
      const double lo = cfg.prior.lower.size() == 1 ? cfg.prior.lower[0] : cfg.prior.lower[static_cast<std::size_t>(i)];
      const double hi = cfg.prior.upper.size() == 1 ? cfg.prior.upper[0] : cfg.prior.upper[static_cast<std::size_t>(i)];
      check(lo < hi, "prior.lower must be below prior.upper");
    }
    check(cfg.prior.mean.empty() && cfg.prior.sd.empty(), "a uniform-box prior takes no 'mean'/'sd'");
  }

  const int forms = int(!cfg.noise.sd.empty()) + int(cfg.noise.multilevel.has_value()) +
                    int(!cfg.noise.covariance_file.empty());
  check(forms == 1, "noise needs exactly one of 'sd', 'multilevel', 'covariance_file'");
  check_length(cfg.noise.mean, m, "noise.mean", true);
  if (!cfg.noise.sd.empty()) {
    check_length(cfg.noise.sd, m, "noise.sd");
    for (double s : cfg.noise.sd) check(s > 0, "noise.sd entries must be positive");
  }
  if (cfg.noise.multilevel) {
    const auto& ml = *cfg.noise.multilevel;
    Eigen::Index total = 0;
    for (auto b : ml.blocks) {
      check(b >= 1, "noise.multilevel.blocks entries must be positive");
      total += b;
    }
    check(total == m, "noise.multilevel.blocks must sum to the observation count " + std::to_string(m));
    check(ml.delta_e > 0 && ml.c > 0 && ml.c <= 1, "noise.multilevel needs delta_e > 0 and 0 < c <= 1");
  }
  if (!cfg.noise.covariance_file.empty())
    check(fs::exists(cfg.resolve(cfg.noise.covariance_file)),
          "noise.covariance_file not found: " + cfg.resolve(cfg.noise.covariance_file).string());

  const auto& mc = cfg.mcmc;
  check(mc.walkers >= 2 * d && mc.walkers % 2 == 0,
        "mcmc.walkers must be even and at least twice the parameter dimension (" + std::to_string(2 * d) + ")");
  check(mc.burn_in >= 0 && mc.steps > mc.burn_in, "mcmc needs 0 <= burn_in < steps");
  check(mc.thin >= 1 && mc.ensembles >= 1, "mcmc needs thin >= 1 and ensembles >= 1");
  check(mc.stretch_a > 1, "mcmc.stretch_a must exceed 1");
  check(mc.init == "prior" || mc.init == "mode-ball", "mcmc.init must be 'prior' or 'mode-ball'");
  check(mc.init_scale > 0 && mc.mode_starts >= 1, "mcmc needs init_scale > 0 and mode_starts >= 1");

  check(cfg.bae.q >= 2, "bae.q must be at least 2");

  check(cfg.data.synthesize != !cfg.data.path.empty(), "data needs exactly one of 'path' or 'synthesize'");
  if (cfg.data.synthesize) check(!cfg.data.truth.empty(), "data.synthesize needs data.truth");
  if (!cfg.data.truth.empty())
    check(static_cast<Eigen::Index>(cfg.data.truth.size()) == d,
          "data.truth must have " + std::to_string(d) + " entries");
  for (double x : cfg.data.truth) check(std::isfinite(x), "data.truth must be finite");
  if (!cfg.data.path.empty())
    check(fs::exists(cfg.resolve(cfg.data.path)), "data file not found: " + cfg.resolve(cfg.data.path).string());

  check(cfg.predict.draws >= 1, "predict.draws must be positive");
  check(!cfg.predict.levels.empty() && std::is_sorted(cfg.predict.levels.begin(), cfg.predict.levels.end()),
        "predict.levels must be a non-empty increasing list");
  for (double l : cfg.predict.levels) check(l >= 0 && l <= 1, "predict.levels must lie in [0, 1]");
  check(cfg.predict.model == "coarse" || cfg.predict.model == "fine", "predict.model must be 'coarse' or 'fine'");
  check(cfg.report.bins >= 1 && cfg.report.prior_draws >= 1, "report needs bins >= 1 and prior_draws >= 1");
}

std::uint64_t parse_seed(Section& s) {
  const auto text = s.opt<std::string>("seed");
  if (!text) s.fail("seed", "is required");
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(*text, &pos, 0);
    if (pos != text->size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    s.fail("seed", "must be an unsigned 64-bit integer");
  }
}

}  // namespace

PipelineConfig parse_config(const std::string& yaml_text, const fs::path& base_dir, const Overrides& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config must be a YAML mapping");

  PipelineConfig cfg;
  cfg.base_dir = base_dir;
  Section top(root, "");
  cfg.profile = parse_profile(top.get<std::string>("profile", "desk"));
  if (overrides.profile) cfg.profile = *overrides.profile;
  const auto defaults = defaults_for(cfg.profile);
  if (auto out = top.opt<std::string>("output")) cfg.output = cfg.resolve(*out);
  cfg.seed = parse_seed(top);
  cfg.workers = top.get<int>("workers", 1);

  {
    Section model = top.child("model");
    const auto kind = model.required<std::string>("kind");
    if (kind == "polynomial")
      cfg.model.kind = ModelKind::polynomial;
    else if (kind == "slice")
      cfg.model.kind = ModelKind::slice;
    else if (kind == "external")
      cfg.model.kind = ModelKind::external;
    else
      model.fail("kind", "must be polynomial, slice or external");
    for (const char* other : {"polynomial", "slice", "external"})
      if (other != kind && model.has(other)) model.fail(other, "given but model.kind is " + kind);

    Section poly = model.child("polynomial");
    cfg.model.polynomial.points = poly.get<Eigen::Index>("points", 30);
    cfg.model.polynomial.order = poly.get<Eigen::Index>("order", 2);
    cfg.model.polynomial.kept = poly.get<Eigen::Index>("kept", 1);
    cfg.model.polynomial.t0 = poly.get<double>("t0", 0.0);
    cfg.model.polynomial.t1 = poly.get<double>("t1", 1.0);
    cfg.model.polynomial.identical = poly.get<bool>("identical", false);
    poly.finish();

    Section sl = model.child("slice");
    Section fine = sl.child("fine");
    Section coarse = sl.child("coarse");
    cfg.model.slice.fine = {fine.get<int>("nx", defaults.fine.nx), fine.get<int>("nz", defaults.fine.nz)};
    cfg.model.slice.coarse = {coarse.get<int>("nx", defaults.coarse.nx), coarse.get<int>("nz", defaults.coarse.nz)};
    fine.finish();
    coarse.finish();
    const YAML::Node physics = sl.raw("physics");
    if (physics && !physics.IsNull()) {
      if (!physics.IsMap()) throw ConfigError("config key 'model.slice.physics' must be a mapping");
      for (const auto& kv : physics) {
        const auto key = kv.first.as<std::string>();
        try {
          cfg.model.slice.physics[key] = kv.second.as<double>();
        } catch (const YAML::Exception&) {
          throw ConfigError("config key 'model.slice.physics." + key + "' must be a number");
        }
      }
    }
    sl.finish();

    Section ext = model.child("external");
    cfg.model.external.fine_command = ext.strings("fine");
    cfg.model.external.coarse_command = ext.strings("coarse");
    cfg.model.external.timeout_s = ext.get<double>("timeout_s", 300.0);
    cfg.model.external.processes = ext.get<int>("processes", 1);
    cfg.model.external.input_dim = ext.get<Eigen::Index>("input_dim", 0);
    cfg.model.external.output_dim = ext.get<Eigen::Index>("output_dim", 0);
    ext.finish();
    model.finish();
  }

  {
    Section prior = top.child("prior");
    if (!prior.present()) throw ConfigError("config key 'prior' is required");
    const auto kind = prior.required<std::string>("kind");
    if (kind == "gaussian")
      cfg.prior.kind = PriorSpec::Kind::gaussian;
    else if (kind == "uniform-box")
      cfg.prior.kind = PriorSpec::Kind::uniform_box;
    else
      prior.fail("kind", "must be gaussian or uniform-box");
    cfg.prior.mean = prior.numbers("mean");
    cfg.prior.sd = prior.numbers("sd");
    cfg.prior.lower = prior.numbers("lower");
    cfg.prior.upper = prior.numbers("upper");
    prior.finish();
  }

  {
    Section noise = top.child("noise");
    if (!noise.present()) throw ConfigError("config key 'noise' is required");
    cfg.noise.mean = noise.numbers("mean");
    cfg.noise.sd = noise.numbers("sd");
    cfg.noise.covariance_file = noise.get<std::string>("covariance_file", "");
    Section ml = noise.child("multilevel");
    if (ml.present()) {
      MultilevelNoise m;
      m.blocks = ml.required<std::vector<Eigen::Index>>("blocks");
      m.delta_e = ml.required<double>("delta_e");
      m.c = ml.required<double>("c");
      cfg.noise.multilevel = m;
    }
    ml.finish();
    noise.finish();
  }

  {
    Section mc = top.child("mcmc");
    cfg.mcmc.walkers = mc.get<int>("walkers", defaults.walkers);
    cfg.mcmc.steps = mc.get<int>("steps", defaults.steps);
    cfg.mcmc.burn_in = mc.get<int>("burn_in", defaults.burn_in);
    cfg.mcmc.thin = mc.get<int>("thin", 1);
    cfg.mcmc.ensembles = mc.get<int>("ensembles", 1);
    cfg.mcmc.stretch_a = mc.get<double>("stretch_a", 2.0);
    cfg.mcmc.init = mc.get<std::string>("init", "prior");
    cfg.mcmc.init_scale = mc.get<double>("init_scale", 0.01);
    cfg.mcmc.mode_starts = mc.get<int>("mode_starts", 32);
    mc.finish();
  }

  {
    Section b = top.child("bae");
    cfg.bae.q = b.get<long long>("q", defaults.q);
    cfg.bae.failure_policy = parse_failure_policy(b.get<std::string>("failure_policy", "replace"));
    cfg.bae.source = parse_error_source(b.get<std::string>("source", "posterior-informed"));
    const auto form = b.get<std::string>("total_error_form", "with-noise");
    if (form == "with-noise")
      cfg.bae.total_error_form = TotalErrorForm::with_noise;
    else if (form == "error-only")
      cfg.bae.total_error_form = TotalErrorForm::error_only;
    else
      b.fail("total_error_form", "must be with-noise or error-only");
    b.finish();
  }

  {
    Section data = top.child("data");
    if (!data.present()) throw ConfigError("config key 'data' is required");
    cfg.data.path = data.get<std::string>("path", "");
    cfg.data.truth = data.numbers("truth");
    cfg.data.synthesize = data.get<bool>("synthesize", false);
    data.finish();
  }

  {
    Section p = top.child("predict");
    cfg.predict.draws = p.get<long long>("draws", 200);
    if (p.has("levels")) cfg.predict.levels = p.numbers("levels");
    cfg.predict.noisy = p.get<bool>("noisy", false);
    cfg.predict.model = p.get<std::string>("model", "coarse");
    p.finish();
  }

  {
    Section r = top.child("report");
    cfg.report.bins = r.get<int>("bins", 40);
    cfg.report.prior_draws = r.get<long long>("prior_draws", 10000);
    r.finish();
  }
  top.finish();

  if (overrides.output) cfg.output = *overrides.output;
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.workers) cfg.workers = *overrides.workers;
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const fs::path& path, const Overrides& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_text(path), fs::absolute(path).parent_path(), overrides);
}

io::Json config_json(const PipelineConfig& cfg) {
  using io::Json;
  Json j;
  j["profile"] = to_string(cfg.profile);
  j["seed"] = std::to_string(cfg.seed);

  Json model;
  model["kind"] = to_string(cfg.model.kind);
  switch (cfg.model.kind) {
    case ModelKind::polynomial: {
      const auto& p = cfg.model.polynomial;
      model["polynomial"] = {{"points", p.points}, {"order", p.order}, {"kept", p.kept},
                             {"t0", p.t0},         {"t1", p.t1},       {"identical", p.identical}};
      break;
    }
    case ModelKind::slice: {
      const auto& s = cfg.model.slice;
      Json physics = Json::object();
      for (const auto& [k, v] : s.physics) physics[k] = v;
      model["slice"] = {{"fine", {{"nx", s.fine.nx}, {"nz", s.fine.nz}}},
                        {"coarse", {{"nx", s.coarse.nx}, {"nz", s.coarse.nz}}},
                        {"physics", physics}};
      break;
    }
    case ModelKind::external: {
      const auto& e = cfg.model.external;
      model["external"] = {{"fine", e.fine_command},       {"coarse", e.coarse_command},
                           {"timeout_s", e.timeout_s},     {"processes", e.processes},
                           {"input_dim", e.input_dim},     {"output_dim", e.output_dim}};
      break;
    }
  }
  j["model"] = model;

  j["prior"] = {{"kind", cfg.prior.kind == PriorSpec::Kind::gaussian ? "gaussian" : "uniform-box"},
                {"mean", cfg.prior.mean},
                {"sd", cfg.prior.sd},
                {"lower", cfg.prior.lower},
                {"upper", cfg.prior.upper}};

  Json noise = {{"mean", cfg.noise.mean}, {"sd", cfg.noise.sd}};
  if (cfg.noise.multilevel)
    noise["multilevel"] = {{"blocks", cfg.noise.multilevel->blocks},
                           {"delta_e", cfg.noise.multilevel->delta_e},
                           {"c", cfg.noise.multilevel->c}};
  if (!cfg.noise.covariance_file.empty())
    noise["covariance_sha256"] = io::sha256_file(cfg.resolve(cfg.noise.covariance_file));
  j["noise"] = noise;

  const auto& mc = cfg.mcmc;
  j["mcmc"] = {{"walkers", mc.walkers},     {"steps", mc.steps},
               {"burn_in", mc.burn_in},     {"thin", mc.thin},
               {"ensembles", mc.ensembles}, {"stretch_a", mc.stretch_a},
               {"init", mc.init},           {"init_scale", mc.init_scale},
               {"mode_starts", mc.mode_starts}};
  j["bae"] = {{"q", cfg.bae.q},
              {"failure_policy", to_string(cfg.bae.failure_policy)},
              {"source", to_string(cfg.bae.source)},
              {"total_error_form",
               cfg.bae.total_error_form == TotalErrorForm::with_noise ? "with-noise" : "error-only"}};
  Json data = {{"synthesize", cfg.data.synthesize}, {"truth", cfg.data.truth}};
  if (!cfg.data.path.empty()) data["sha256"] = io::sha256_file(cfg.resolve(cfg.data.path));
  j["data"] = data;
  j["predict"] = {{"draws", cfg.predict.draws},
                  {"levels", cfg.predict.levels},
                  {"noisy", cfg.predict.noisy},
                  {"model", cfg.predict.model}};
  j["report"] = {{"bins", cfg.report.bins}, {"prior_draws", cfg.report.prior_draws}};
  return j;
}

std::string config_hash(const PipelineConfig& cfg) { return io::sha256_hex(config_json(cfg).dump()); }

namespace {

std::vector<double> broadcast(const std::vector<double>& v, Eigen::Index n) {
  if (v.size() == 1) return std::vector<double>(static_cast<std::size_t>(n), v[0]);
  return v;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

slice::SliceConfig slice_config(const PipelineConfig& cfg, const GridSection& grid) {
  auto sc = slice::default_config(grid.nx, grid.nz);
  for (const auto& [key, value] : cfg.model.slice.physics) sc.*(slice_physics_fields().at(key)) = value;
  sc.validate();
  return sc;
}

}  // namespace

Models build_models(const PipelineConfig& cfg) {
  Models out;
  switch (cfg.model.kind) {
    case ModelKind::polynomial: {
      const auto& p = cfg.model.polynomial;
      const auto pair = PolynomialPair::make(p.points, p.order, p.identical ? 1 : p.kept, p.t0, p.t1);
      out.fine = std::make_shared<LinearModel>(pair.fine);
      out.coarse = p.identical ? out.fine : std::make_shared<LinearModel>(pair.coarse);
      for (Eigen::Index i = 0; i < p.order; ++i) out.parameter_names.push_back("k_" + std::to_string(i + 1));
      for (Eigen::Index i = 0; i < p.points; ++i) out.labels.push_back({"", io::format_double(pair.t(i))});
      break;
    }
    case ModelKind::slice: {
      auto fine = std::make_shared<slice::SliceModel>(slice_config(cfg, cfg.model.slice.fine));
      out.coarse = std::make_shared<slice::SliceModel>(slice_config(cfg, cfg.model.slice.coarse));
      out.parameter_names = slice::parameter_names(fine->config());
      const auto& wells = fine->config().wells;
      for (std::size_t w = 0; w < wells.size(); ++w)
        for (double depth : wells[w].depths) out.labels.push_back({std::to_string(w + 1), io::format_double(depth)});
      out.fine = std::move(fine);
      break;
    }
    case ModelKind::external: {
      const auto& e = cfg.model.external;
      const auto timeout = std::chrono::milliseconds(static_cast<long long>(e.timeout_s * 1000.0));
      auto make = [&](const std::vector<std::string>& command, const char* which) {
        auto model = std::make_shared<ExternalModel>(ExternalModelSpec{command, timeout, e.processes});
        if (model->input_dim() != e.input_dim || model->output_dim() != e.output_dim)
          throw ConfigError(std::string("external ") + which + " model reports dimensions (" +
                            std::to_string(model->input_dim()) + ", " + std::to_string(model->output_dim()) +
                            "), config says (" + std::to_string(e.input_dim) + ", " +
                            std::to_string(e.output_dim) + ")");
        return model;
      };
      out.fine = make(e.fine_command, "fine");
      out.coarse = e.coarse_command == e.fine_command ? out.fine : make(e.coarse_command, "coarse");
      for (Eigen::Index i = 0; i < e.input_dim; ++i) out.parameter_names.push_back("k_" + std::to_string(i + 1));
      out.labels.assign(static_cast<std::size_t>(e.output_dim), ObservationLabel{});
      break;
    }
  }
  return out;
}

PriorSpec build_prior(const PipelineConfig& cfg) {
  const Eigen::Index d = cfg.parameter_dim();
  if (cfg.prior.kind == PriorSpec::Kind::uniform_box)
    return PriorSpec::uniform_box(to_vector(broadcast(cfg.prior.lower, d)), to_vector(broadcast(cfg.prior.upper, d)));
  const Eigen::VectorXd sd = to_vector(broadcast(cfg.prior.sd, d));
  return PriorSpec::gaussian(
      GaussianModeld(to_vector(broadcast(cfg.prior.mean, d)), Eigen::MatrixXd(sd.array().square().matrix().asDiagonal())));
}

GaussianModeld build_noise(const PipelineConfig& cfg, Eigen::Index m) {
  Eigen::VectorXd mean =
      cfg.noise.mean.empty() ? Eigen::VectorXd::Zero(m) : to_vector(broadcast(cfg.noise.mean, m));
  Eigen::MatrixXd cov;
  if (!cfg.noise.sd.empty()) {
    const Eigen::VectorXd sd = to_vector(broadcast(cfg.noise.sd, m));
    cov = sd.array().square().matrix().asDiagonal();
  } else if (cfg.noise.multilevel) {
    const auto& ml = *cfg.noise.multilevel;
    cov = multilevel_noise_cov<double>(m, ml.blocks, ml.delta_e, ml.c);
  } else {
    cov = io::read_matrix_csv(cfg.resolve(cfg.noise.covariance_file));
    if (cov.rows() != m || cov.cols() != m)
      throw ConfigError("noise.covariance_file must hold a " + std::to_string(m) + "x" + std::to_string(m) + " matrix");
  }
  if (mean.size() != m) throw ConfigError("noise.mean length does not match the observation count");
  return GaussianModeld(std::move(mean), cov);
}

}  // namespace bae::pipeline
