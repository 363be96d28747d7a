#pragma once

// Config-driven orchestration of the inversion workflow. Each stage reads its
// inputs from the output directory, writes its files into a fresh stage
// directory and records them, with checksums, in manifest.json.
//
//   synthesize  data from a known truth on the fine model
//   naive       MCMC under the coarse model and the noise-only likelihood
//   errors      approximation-error ensemble and its statistics
//   bae         MCMC under the coarse model and the total-error likelihood
//   predict     posterior predictive tables (naive or bae)
//   recheck     error statistics recomputed under the bae posterior
//   oracle      closed-form posteriors for linear-Gaussian problems
//   report      marginal histograms, feasibility table, telemetry

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bae/bae.hpp"
#include "bae/io.hpp"
#include "bae/oracle.hpp"
#include "bae/posterior.hpp"

namespace bae::pipeline {

namespace fs = std::filesystem;

enum class ModelKind { polynomial, slice, external };
enum class Profile { desk, paper };

std::string to_string(ModelKind k);
std::string to_string(Profile p);
Profile parse_profile(const std::string& s);

struct PolynomialSection {
  Eigen::Index points = 30;
  Eigen::Index order = 2;
  Eigen::Index kept = 1;
  double t0 = 0.0;
  double t1 = 1.0;
  /// Use the fine matrix for the coarse model too (the zero-gap case).
  bool identical = false;
};

struct GridSection {
  int nx = 0;
  int nz = 0;
};

struct SliceSection {
  GridSection fine;
  GridSection coarse;
  /// Overrides of physical constants, by SliceConfig field name.
  std::map<std::string, double> physics;
};

struct ExternalSection {
  std::vector<std::string> fine_command;
  std::vector<std::string> coarse_command;
  double timeout_s = 300.0;
  int processes = 1;
  Eigen::Index input_dim = 0;
  Eigen::Index output_dim = 0;
};

struct ModelSection {
  ModelKind kind = ModelKind::polynomial;
  PolynomialSection polynomial;
  SliceSection slice;
  ExternalSection external;
};

/// Vectors given as a single number are broadcast to the required length.
struct PriorSection {
  PriorSpec::Kind kind = PriorSpec::Kind::gaussian;
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct MultilevelNoise {
  std::vector<Eigen::Index> blocks;
  double delta_e = 1.0;
  double c = 1.0;
};

struct NoiseSection {
  std::vector<double> mean;  // e*, zero when empty
  std::vector<double> sd;
  std::optional<MultilevelNoise> multilevel;
  std::string covariance_file;
};

struct McmcSection {
  int walkers = 0;
  int steps = 0;
  int burn_in = 0;
  int thin = 1;
  int ensembles = 1;
  double stretch_a = 2.0;
  std::string init = "prior";  // prior | mode-ball
  double init_scale = 0.01;    // ball radius in prior sds
  int mode_starts = 32;
};

struct BaeSection {
  long long q = 0;
  FailurePolicy failure_policy = FailurePolicy::replace;
  ErrorSource source = ErrorSource::posterior_informed;
  TotalErrorForm total_error_form = TotalErrorForm::with_noise;
};

struct DataSection {
  std::string path;                  // observed data (CSV)
  std::vector<double> truth;         // known truth, for synthetic studies
  bool synthesize = false;           // data generated by the synthesize stage
};

struct PredictSection {
  long long draws = 200;
  std::vector<double> levels = kDefaultPredictiveLevels;
  bool noisy = false;            // add measurement noise to each curve
  std::string model = "coarse";  // coarse | fine
};

struct ReportSection {
  int bins = 40;
  long long prior_draws = 10000;
};

struct PipelineConfig {
  Profile profile = Profile::desk;
  fs::path output;
  std::uint64_t seed = 0;
  int workers = 1;
  ModelSection model;
  PriorSection prior;
  NoiseSection noise;
  McmcSection mcmc;
  BaeSection bae;
  DataSection data;
  PredictSection predict;
  ReportSection report;
  fs::path base_dir;  // relative file paths are resolved against this

  fs::path resolve(const std::string& p) const;
  /// Parameter dimension implied by the model section.
  Eigen::Index parameter_dim() const;
};

/// Command-line overrides, applied before validation.
struct Overrides {
  std::optional<fs::path> output;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<Profile> profile;
};

/// Parses and validates a YAML config. Unknown keys, wrong types and
/// inconsistent sizes raise ConfigError before any model is constructed.
PipelineConfig load_config(const fs::path& path, const Overrides& overrides = {});
PipelineConfig parse_config(const std::string& yaml_text, const fs::path& base_dir, const Overrides& overrides = {});

/// Canonical JSON of everything that influences results (output path and
/// worker count excluded; referenced files enter through their checksums).
io::Json config_json(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

struct ObservationLabel {
  std::string well;   // empty when not applicable
  std::string depth;  // depth (slice) or abscissa (polynomial)
};

struct Models {
  ForwardModelPtr fine;
  ForwardModelPtr coarse;
  std::vector<std::string> parameter_names;
  std::vector<ObservationLabel> labels;
};

Models build_models(const PipelineConfig& cfg);
PriorSpec build_prior(const PipelineConfig& cfg);
GaussianModeld build_noise(const PipelineConfig& cfg, Eigen::Index m);

enum class StageStatus { ran, skipped };

class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, std::ostream& log);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  StageStatus synthesize();
  StageStatus naive();
  StageStatus errors();
  StageStatus bae();
  StageStatus predict(const std::string& which);  // "naive" | "bae"
  StageStatus recheck();
  StageStatus oracle();
  StageStatus report();

  const PipelineConfig& config() const noexcept { return cfg_; }
  const std::string& hash() const noexcept { return hash_; }
  fs::path manifest_path() const { return cfg_.output / "manifest.json"; }

  /// Combined chain of a completed MCMC stage ("naive" or "bae").
  Chain load_chain(const std::string& stage) const;
  ErrorStatistics load_error_statistics() const;
  Eigen::VectorXd observed_data() const;

 private:
  struct State;
  /// Builds the models, prior and noise model on first use.
  State& ready();

  PipelineConfig cfg_;
  std::string hash_;
  std::ostream& log_;
  std::unique_ptr<State> state_;
};

}  // namespace bae::pipeline
