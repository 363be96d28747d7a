#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "bae/pipeline.hpp"

namespace bae::pipeline {

namespace {

using io::Json;

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

Json telemetry_json(FailureTelemetry& t) {
  Json reasons = Json::object();
  {
    std::lock_guard lock(t.mutex);
    for (const auto& [reason, count] : t.reasons) reasons[reason] = count;
  }
  return {{"evaluations", t.evaluations.load()}, {"failures", t.failures.load()}, {"reasons", reasons}};
}

std::string level_label(double level) { return "q_" + io::format_double(level); }

// Stages whose files a stage may read; a change in any of them invalidates
// the stage's recorded outputs.
const std::map<std::string, std::vector<std::string>>& upstream_of() {
  static const std::map<std::string, std::vector<std::string>> up = {
      {"synthesize", {}},
      {"naive", {"synthesize"}},
      {"errors", {"naive"}},
      {"bae", {"synthesize", "errors"}},
      {"predict-naive", {"synthesize", "naive"}},
      {"predict-bae", {"synthesize", "errors", "bae"}},
      {"recheck", {"errors", "bae"}},
      {"oracle", {"synthesize", "naive", "bae"}},
      {"report", {"synthesize", "naive", "errors", "bae", "recheck"}},
  };
  return up;
}

}  // namespace

struct Pipeline::State {
  std::optional<Models> models;
  std::optional<PriorSpec> prior;
  std::optional<GaussianModeld> noise;
  Json manifest;
};

Pipeline::Pipeline(PipelineConfig cfg, std::ostream& log)
    : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), log_(log), state_(std::make_unique<State>()) {
  const fs::path manifest = manifest_path();
  if (fs::exists(manifest) && io::read_json(manifest).value("config_hash", std::string()) != hash_)
    throw ConfigError("output directory " + cfg_.output.string() +
                      " holds results of a different configuration; choose another output directory");
}

Pipeline::~Pipeline() = default;

namespace {

struct StageContext {
  fs::path dir;  // where the stage writes its files
  Json record = Json::object();
  std::vector<std::string> volatile_files;
};

}  // namespace

// Manifest bookkeeping shared by the stage runner and the loaders.
namespace detail_pipeline {

Json load_manifest(const PipelineConfig& cfg, const std::string& hash) {
  const fs::path path = cfg.output / "manifest.json";
  if (!fs::exists(path)) return Json{{"config_hash", hash}, {"seed", std::to_string(cfg.seed)}, {"stages", Json::object()}};
  Json m = io::read_json(path);
  if (m.value("config_hash", std::string()) != hash)
    throw ConfigError("output directory " + cfg.output.string() +
                      " holds results of a different configuration; choose another output directory");
  return m;
}

bool stage_complete(const Json& manifest, const std::string& name) {
  return manifest["stages"].contains(name) && manifest["stages"][name].value("status", "") == "complete";
}

std::string fingerprint(const Json& manifest, const std::string& name) {
  std::string acc;
  for (const auto& up : upstream_of().at(name)) {
    acc += up + ":";
    if (!stage_complete(manifest, up)) {
      acc += "absent;";
      continue;
    }
    for (const auto& f : manifest["stages"][up]["files"])
      if (!f.value("volatile", false)) acc += f["path"].get<std::string>() + "=" + f["sha256"].get<std::string>() + ";";
  }
  return io::sha256_hex(acc);
}

bool files_intact(const fs::path& root, const Json& stage) {
  for (const auto& f : stage["files"]) {
    const fs::path p = root / f["path"].get<std::string>();
    if (!fs::exists(p)) return false;
    if (!f.value("volatile", false) && io::sha256_file(p) != f["sha256"].get<std::string>()) return false;
  }
  return true;
}

}  // namespace detail_pipeline

namespace {

template <typename Body>
StageStatus run_stage(const PipelineConfig& cfg, const std::string& hash, Json& manifest, std::ostream& log,
                      const std::string& name, Body&& body) {
  using namespace detail_pipeline;
  manifest = load_manifest(cfg, hash);
  const std::string fp = fingerprint(manifest, name);
  if (stage_complete(manifest, name)) {
    const Json& prior_run = manifest["stages"][name];
    if (prior_run.value("inputs_fingerprint", "") == fp && files_intact(cfg.output, prior_run)) {
      log << "[" << name << "] up to date (config " << hash.substr(0, 12) << "), skipped\n";
      return StageStatus::skipped;
    }
  }

  fs::create_directories(cfg.output);
  const fs::path partial = cfg.output / ("." + name + ".partial");
  fs::remove_all(partial);
  fs::create_directories(partial);

  StageContext ctx;
  ctx.dir = partial;
  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  log << "[" << name << "] running\n";
  body(ctx);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path final_dir = cfg.output / name;
  fs::remove_all(final_dir);
  fs::rename(partial, final_dir);

  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(final_dir))
    if (entry.is_regular_file()) paths.push_back(fs::relative(entry.path(), cfg.output));
  std::sort(paths.begin(), paths.end());
  Json files = Json::array();
  for (const auto& rel : paths) {
    const fs::path abs = cfg.output / rel;
    Json f = {{"path", rel.generic_string()}, {"sha256", io::sha256_file(abs)}, {"bytes", fs::file_size(abs)}};
    if (std::find(ctx.volatile_files.begin(), ctx.volatile_files.end(), rel.filename().string()) !=
        ctx.volatile_files.end())
      f["volatile"] = true;
    files.push_back(f);
  }

  Json record = {{"status", "complete"},        {"config_hash", hash},  {"started", started},
                 {"finished", utc_now()},       {"wall_seconds", wall}, {"inputs_fingerprint", fp},
                 {"files", files}};
  for (auto it = ctx.record.begin(); it != ctx.record.end(); ++it) record[it.key()] = it.value();
  manifest["stages"][name] = record;
  io::write_json(cfg.output / "manifest.json", manifest);
  log << "[" << name << "] done in " << std::fixed << std::setprecision(2) << wall << " s, " << files.size()
      << " files\n";
  log.unsetf(std::ios::fixed);
  return StageStatus::ran;
}

void require_stage(const Json& manifest, const std::string& name, const std::string& why) {
  if (!detail_pipeline::stage_complete(manifest, name))
    throw StageOrderError("stage '" + name + "' has not been run: " + why);
}

}  // namespace

Eigen::VectorXd Pipeline::observed_data() const {
  if (!cfg_.data.path.empty()) return io::read_vector_csv(cfg_.resolve(cfg_.data.path));
  const Json manifest = detail_pipeline::load_manifest(cfg_, hash_);
  require_stage(manifest, "synthesize", "data.synthesize is set, so run 'synthesize' first");
  return io::read_vector_csv(cfg_.output / "synthesize" / "y_obs.csv");
}

Chain Pipeline::load_chain(const std::string& stage) const {
  const Json manifest = detail_pipeline::load_manifest(cfg_, hash_);
  require_stage(manifest, stage, "its chain is needed here");
  const fs::path dir = cfg_.output / stage;
  const Json meta = io::read_json(dir / "chain_meta.json");
  std::vector<Chain> chains;
  for (const auto& e : meta["ensembles"]) {
    Chain c = io::read_chain_csv(dir / e["file"].get<std::string>());
    c.n_walkers = e["n_walkers"].get<int>();
    c.seeds = {std::stoull(e["seed"].get<std::string>())};
    c.proposals = e["proposals"].get<long long>();
    c.accepted_proposals = e["accepted_proposals"].get<long long>();
    c.burn_in_discarded = e["burn_in_discarded"].get<long long>();
    chains.push_back(std::move(c));
  }
  if (chains.empty()) throw Error(stage + ": chain_meta.json lists no ensembles");
  return combine_ensembles(chains);
}

ErrorStatistics Pipeline::load_error_statistics() const {
  const Json manifest = detail_pipeline::load_manifest(cfg_, hash_);
  require_stage(manifest, "errors", "the approximation-error statistics are needed here");
  const fs::path dir = cfg_.output / "errors";
  const Json meta = io::read_json(dir / "error_meta.json");
  ErrorStatistics s;
  s.epsilon_mean = io::read_vector_csv(dir / "epsilon_mean.csv");
  s.epsilon_cov = io::read_matrix_csv(dir / "epsilon_cov.csv");
  s.q_requested = meta["q_requested"].get<long long>();
  s.q_succeeded = meta["q_succeeded"].get<long long>();
  s.q_failed = meta["q_failed"].get<long long>();
  s.source = parse_error_source(meta["source"].get<std::string>());
  s.seed = std::stoull(meta["seed"].get<std::string>());
  return s;
}

namespace {

struct Shared {
  const PipelineConfig& cfg;
  const std::string& hash;
  std::ostream& log;
  const Models& models;
  const PriorSpec& prior;
  const GaussianModeld& noise;
};

Chain run_mcmc(const Shared& s, const std::string& label, const LogPosterior& target, StageContext& ctx) {
  const auto& mc = s.cfg.mcmc;
  const RngStream base = RngStream(s.cfg.seed).substream(label);
  Json init = {{"kind", mc.init}};
  std::optional<Eigen::VectorXd> centre;
  if (mc.init == "mode-ball") {
    RngStream rng = base.substream("modes");
    WorkerPool pool(s.cfg.workers);
    const auto modes = find_modes(target, ModeSearchSettings{mc.mode_starts, 4000}, rng, pool);
    centre = modes.points.col(0);
    init["scale"] = mc.init_scale;
    init["starts"] = mc.mode_starts;
    init["centre"] = io::to_json(*centre);
    init["centre_logpost"] = modes.logpost(0);
    s.log << "[" << label << "] walkers start near a mode with log posterior " << modes.logpost(0) << "\n";
  }

  std::vector<Chain> chains;
  Json ensembles = Json::array();
  for (int e = 0; e < mc.ensembles; ++e) {
    SamplerConfig sc;
    sc.n_walkers = mc.walkers;
    sc.n_steps = mc.steps;
    sc.burn_in = mc.burn_in;
    sc.thin = mc.thin;
    sc.stretch_a = mc.stretch_a;
    sc.workers = s.cfg.workers;
    sc.seed = base.substream(static_cast<std::uint64_t>(e)).seed();
    if (centre) {
      RngStream ball = base.substream("ball").substream(static_cast<std::uint64_t>(e));
      sc.init_points = ball_around(*centre, s.prior, mc.init_scale, mc.walkers, ball);
    } else {
      const PriorSpec* prior = &s.prior;
      sc.init_sampler = [prior](RngStream& r) { return prior->sample(r); };
    }
    Chain c = run_ensemble(target, sc);
    const std::string file = "chain_" + std::to_string(e) + ".csv";
    io::write_chain_csv(ctx.dir / file, c);
    s.log << "[" << label << "] ensemble " << e << ": " << c.size() << " samples, acceptance " << c.acceptance_rate()
          << "\n";
    for (const auto& w : c.warnings) s.log << "[" << label << "] warning: " << w << "\n";
    ensembles.push_back({{"file", file},
                         {"seed", std::to_string(sc.seed)},
                         {"n_walkers", c.n_walkers},
                         {"samples", c.size()},
                         {"burn_in_discarded", c.burn_in_discarded},
                         {"proposals", c.proposals},
                         {"accepted_proposals", c.accepted_proposals},
                         {"acceptance_rate", c.acceptance_rate()},
                         {"warnings", c.warnings}});
    chains.push_back(std::move(c));
  }
  Chain combined = combine_ensembles(chains);

  Json meta = {{"config_hash", s.hash},
               {"parameters", s.models.parameter_names},
               {"n_steps", mc.steps},
               {"burn_in_steps", mc.burn_in},
               {"thin", mc.thin},
               {"stretch_a", mc.stretch_a},
               {"acceptance_rate", combined.acceptance_rate()},
               {"samples", combined.size()},
               {"init", init},
               {"ensembles", ensembles}};
  io::write_json(ctx.dir / "chain_meta.json", meta);

  Json diag;
  try {
    const auto d = diagnostics(std::span<const Chain>(chains));
    Json per = Json::array();
    for (Eigen::Index i = 0; i < combined.dim(); ++i)
      per.push_back({{"parameter", s.models.parameter_names[static_cast<std::size_t>(i)]},
                     {"mean", d.mean(i)},
                     {"sd", d.sd(i)},
                     {"autocorr_time", d.autocorr_time(i)},
                     {"mc_standard_error", d.mc_standard_error(i)},
                     {"split_rhat", d.split_rhat(i)}});
    diag = {{"acceptance_rate", d.acceptance_rate}, {"samples", d.samples}, {"parameters", per}};
  } catch (const InsufficientSamplesError& e) {
    diag = {{"note", e.what()}};
  }
  io::write_json(ctx.dir / "diagnostics.json", diag);

  ctx.record["seeds"] = Json::array();
  for (const auto& e : ensembles) ctx.record["seeds"].push_back(e["seed"]);
  ctx.record["model_runs"] = telemetry_json(*target.telemetry());
  return combined;
}

void write_error_files(const fs::path& dir, const ErrorEnsemble& ens, const ErrorStatistics& stats,
                       const std::vector<std::string>& names, const std::string& hash, FailurePolicy policy,
                       std::ostream& log) {
  io::write_vector_csv(dir / "epsilon_mean.csv", stats.epsilon_mean);
  io::write_matrix_csv(dir / "epsilon_cov.csv", stats.epsilon_cov);
  io::write_matrix_csv(dir / "epsilon_samples.csv", ens.errors.transpose());
  io::write_matrix_csv(dir / "parameters.csv", ens.parameters.transpose(), names);

  std::string failures = "attempt,reason\r\n";
  for (const auto& f : ens.failures) failures += std::to_string(f.attempt) + "," + io::csv_field(f.reason) + "\r\n";
  io::write_text_atomic(dir / "failures.csv", failures);

  Json meta = {{"config_hash", hash},
               {"q_requested", stats.q_requested},
               {"q_succeeded", stats.q_succeeded},
               {"q_failed", stats.q_failed},
               {"seed", std::to_string(stats.seed)},
               {"source", to_string(stats.source)},
               {"failure_policy", to_string(policy)},
               {"failure_log", "failures.csv"}};

  if (ens.errors.cols() >= 8) {
    const auto normality = normality_diagnostics(SampleEnsembled(ens.errors));
    std::string summary = "component,mean,sd,skewness,excess_kurtosis,degenerate\r\n";
    std::string qq = "component,rank,theoretical,empirical\r\n";
    for (std::size_t c = 0; c < normality.size(); ++c) {
      const auto& n = normality[c];
      summary += std::to_string(c + 1) + "," + io::format_double(n.mean) + "," + io::format_double(n.sd) + "," +
                 io::format_double(n.skewness) + "," + io::format_double(n.excess_kurtosis) + "," +
                 (n.degenerate ? "1" : "0") + "\r\n";
      for (Eigen::Index r = 0; r < n.qq_theoretical.size(); ++r)
        qq += std::to_string(c + 1) + "," + std::to_string(r + 1) + "," + io::format_double(n.qq_theoretical(r)) +
              "," + io::format_double(n.qq_empirical(r)) + "\r\n";
    }
    io::write_text_atomic(dir / "normality.csv", summary);
    io::write_text_atomic(dir / "qq.csv", qq);
    meta["normality"] = "normality.csv";
    meta["qq"] = "qq.csv";
  } else {
    meta["normality"] = nullptr;
    log << "[errors] fewer than 8 members, normality diagnostics skipped\n";
  }
  io::write_json(dir / "error_meta.json", meta);
}

}  // namespace


Pipeline::State& Pipeline::ready() {
  if (!state_->models) {
    state_->models = build_models(cfg_);
    state_->prior = build_prior(cfg_);
    state_->noise = build_noise(cfg_, static_cast<Eigen::Index>(state_->models->labels.size()));
  }
  return *state_;
}

namespace {

std::optional<Eigen::VectorXd> known_truth(const PipelineConfig& cfg) {
  if (cfg.data.truth.empty()) return std::nullopt;
  return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(cfg.data.truth.data(),
                                                           static_cast<Eigen::Index>(cfg.data.truth.size())));
}

// Gaussian added to predictive curves; a zero covariance contributes exactly
// its mean.
GaussianModeld additive_model(Eigen::VectorXd mean, const Eigen::MatrixXd& cov) {
  return GaussianModeld(std::move(mean), cov, JitterPolicy::disabled());
}

}  // namespace

StageStatus Pipeline::synthesize() {
  if (!cfg_.data.synthesize)
    throw ConfigError("data.synthesize is not set; this configuration reads observed data from '" + cfg_.data.path +
                      "'");
  auto& st = ready();
  const auto truth = known_truth(cfg_);
  if (!truth || truth->size() != cfg_.parameter_dim())
    throw ConfigError("data.truth must list " + std::to_string(cfg_.parameter_dim()) + " values");
  return run_stage(cfg_, hash_, st.manifest, log_, "synthesize", [&](StageContext& ctx) {
    RngStream rng = RngStream(cfg_.seed).substream("synthesize");
    const std::uint64_t seed = rng.seed();
    const auto data = synthesize_data(*truth, *st.models->fine, *st.noise, rng);
    io::write_vector_csv(ctx.dir / "y_obs.csv", data.y_obs);
    io::write_vector_csv(ctx.dir / "y_clean.csv", data.y_clean);
    io::write_json(ctx.dir / "truth.json", Json{{"config_hash", hash_},
                                                {"parameters", st.models->parameter_names},
                                                {"truth", io::to_json(*truth)}});
    ctx.record["seeds"] = Json::array({std::to_string(seed)});
    ctx.record["model_runs"] = {{"evaluations", 1}, {"failures", 0}};
  });
}

StageStatus Pipeline::naive() {
  auto& st = ready();
  const Eigen::VectorXd y = observed_data();
  return run_stage(cfg_, hash_, st.manifest, log_, "naive", [&](StageContext& ctx) {
    InverseProblem problem{st.models->coarse, *st.prior, *st.noise, y, std::nullopt};
    problem.validate();
    const Shared shared{cfg_, hash_, log_, *st.models, *st.prior, *st.noise};
    run_mcmc(shared, "naive", naive_log_posterior(problem), ctx);
  });
}

StageStatus Pipeline::errors() {
  auto& st = ready();
  std::optional<Chain> chain;
  if (cfg_.bae.source == ErrorSource::posterior_informed) chain = load_chain("naive");
  return run_stage(cfg_, hash_, st.manifest, log_, "errors", [&](StageContext& ctx) {
    const RngStream base = RngStream(cfg_.seed).substream("errors");
    std::unique_ptr<ParameterSource> source;
    if (chain) {
      source = std::make_unique<ChainSource>(*chain);
    } else {
      const PriorSpec* prior = &*st.prior;
      source = std::make_unique<DistributionSource>([prior](RngStream& r) { return prior->sample(r); });
    }
    RngStream rng = base.substream("draws");
    WorkerPool pool(cfg_.workers);
    const auto ensemble =
        build_error_ensemble(*source, *st.models->fine, *st.models->coarse, cfg_.bae.q, cfg_.bae.failure_policy, rng, pool);
    const auto stats = error_statistics(ensemble, cfg_.bae.source, base.seed());
    log_ << "[errors] " << stats.q_succeeded << " of " << stats.q_requested << " members, " << stats.q_failed
         << " failed draws\n";
    write_error_files(ctx.dir, ensemble, stats, st.models->parameter_names, hash_, cfg_.bae.failure_policy, log_);
    ctx.record["seeds"] = Json::array({std::to_string(base.seed())});
    ctx.record["model_runs"] = {{"evaluations", 2 * (ensemble.q_succeeded + ensemble.q_failed)},
                                {"failures", ensemble.q_failed}};
  });
}

StageStatus Pipeline::bae() {
  auto& st = ready();
  const Eigen::VectorXd y = observed_data();
  const ErrorStatistics stats = load_error_statistics();
  return run_stage(cfg_, hash_, st.manifest, log_, "bae", [&](StageContext& ctx) {
    const GaussianModeld& noise = *st.noise;
    GaussianModeld total =
        cfg_.bae.total_error_form == TotalErrorForm::with_noise
            ? total_error_model(noise, stats)
            : GaussianModeld(noise.mean() + stats.epsilon_mean, stats.epsilon_cov);
    io::write_vector_csv(ctx.dir / "nu_mean.csv", total.mean());
    io::write_matrix_csv(ctx.dir / "nu_cov.csv", total.covariance());
    ctx.record["total_error_jitter"] = total.jitter_used();
    if (total.jitter_used() > 0) log_ << "[bae] total-error covariance needed jitter " << total.jitter_used() << "\n";
    InverseProblem problem{st.models->coarse, *st.prior, noise, y, std::move(total)};
    problem.validate();
    const Shared shared{cfg_, hash_, log_, *st.models, *st.prior, *st.noise};
    run_mcmc(shared, "bae", bae_log_posterior(problem), ctx);
  });
}

StageStatus Pipeline::predict(const std::string& which) {
  if (which != "naive" && which != "bae") throw ConfigError("predict: expected 'naive' or 'bae', got '" + which + "'");
  auto& st = ready();
  const Chain chain = load_chain(which);
  const bool coarse = cfg_.predict.model == "coarse";
  std::optional<ErrorStatistics> stats;
  if (which == "bae" && coarse) stats = load_error_statistics();
  const Eigen::VectorXd y = observed_data();
  const std::string name = "predict-" + which;
  return run_stage(cfg_, hash_, st.manifest, log_, name, [&](StageContext& ctx) {
    const ForwardModel& model = coarse ? *st.models->coarse : *st.models->fine;
    const Eigen::Index m = model.output_dim();
    std::optional<GaussianModeld> additive;
    if (stats || cfg_.predict.noisy) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(m, m);
      if (stats) {
        mean += stats->epsilon_mean;
        cov += stats->epsilon_cov;
      }
      if (cfg_.predict.noisy) {
        mean += st.noise->mean();
        cov += st.noise->covariance();
      }
      additive = additive_model(std::move(mean), cov);
    }
    RngStream rng = RngStream(cfg_.seed).substream(name);
    const std::uint64_t seed = rng.seed();
    WorkerPool pool(cfg_.workers);
    const Eigen::Index draws = std::min<Eigen::Index>(cfg_.predict.draws, chain.size());
    const auto table = posterior_predictive(chain, model, draws, cfg_.predict.levels, rng, pool,
                                            additive ? &*additive : nullptr);

    std::string out = "obs_index,well,depth";
    for (double level : table.levels) out += "," + level_label(level);
    out += ",observed\r\n";
    long long inside = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& label = st.models->labels[static_cast<std::size_t>(i)];
      out += std::to_string(i + 1) + "," + io::csv_field(label.well) + "," + io::csv_field(label.depth);
      for (Eigen::Index l = 0; l < table.quantiles.cols(); ++l) out += "," + io::format_double(table.quantiles(i, l));
      out += "," + io::format_double(y(i)) + "\r\n";
      if (table.quantiles.cols() > 0 && y(i) >= table.quantiles.row(i).minCoeff() &&
          y(i) <= table.quantiles.row(i).maxCoeff())
        ++inside;
    }
    io::write_text_atomic(ctx.dir / "predictive.csv", out);
    io::write_matrix_csv(ctx.dir / "curves.csv", table.curves.transpose());
    io::write_json(ctx.dir / "predictive_meta.json",
                   Json{{"config_hash", hash_},
                        {"posterior", which},
                        {"model", cfg_.predict.model},
                        {"noisy", cfg_.predict.noisy},
                        {"approximation_error_added", stats.has_value()},
                        {"draws", table.draws},
                        {"failures", table.failures},
                        {"levels", table.levels},
                        {"observations_inside_outer_band", inside},
                        {"observations", m}});
    ctx.record["seeds"] = Json::array({std::to_string(seed)});
    ctx.record["model_runs"] = {{"evaluations", table.draws}, {"failures", table.failures}};
  });
}

StageStatus Pipeline::recheck() {
  auto& st = ready();
  const Chain chain = load_chain("bae");
  const Json manifest = detail_pipeline::load_manifest(cfg_, hash_);
  std::optional<ErrorStatistics> original;
  if (detail_pipeline::stage_complete(manifest, "errors")) original = load_error_statistics();
  return run_stage(cfg_, hash_, st.manifest, log_, "recheck", [&](StageContext& ctx) {
    const RngStream base = RngStream(cfg_.seed).substream("recheck");
    ChainSource source(chain);
    RngStream rng = base.substream("draws");
    WorkerPool pool(cfg_.workers);
    const long long q = std::min<long long>(cfg_.bae.q, chain.size());
    const auto ensemble =
        build_error_ensemble(source, *st.models->fine, *st.models->coarse, q, cfg_.bae.failure_policy, rng, pool);
    const auto stats = error_statistics(ensemble, ErrorSource::posterior_informed, base.seed());
    io::write_vector_csv(ctx.dir / "epsilon_mean.csv", stats.epsilon_mean);
    io::write_matrix_csv(ctx.dir / "epsilon_cov.csv", stats.epsilon_cov);
    Json meta = {{"config_hash", hash_},
                 {"source", "bae posterior"},
                 {"q_requested", stats.q_requested},
                 {"q_succeeded", stats.q_succeeded},
                 {"q_failed", stats.q_failed},
                 {"seed", std::to_string(stats.seed)}};
    if (original) {
      std::string cmp = "component,errors_mean,recheck_mean,errors_sd,recheck_sd\r\n";
      for (Eigen::Index i = 0; i < stats.epsilon_mean.size(); ++i)
        cmp += std::to_string(i + 1) + "," + io::format_double(original->epsilon_mean(i)) + "," +
               io::format_double(stats.epsilon_mean(i)) + "," +
               io::format_double(std::sqrt(original->epsilon_cov(i, i))) + "," +
               io::format_double(std::sqrt(stats.epsilon_cov(i, i))) + "\r\n";
      io::write_text_atomic(ctx.dir / "comparison.csv", cmp);
      const double cov_norm = original->epsilon_cov.norm();
      meta["mean_difference_norm"] = (stats.epsilon_mean - original->epsilon_mean).norm();
      meta["relative_cov_difference"] =
          cov_norm > 0 ? (stats.epsilon_cov - original->epsilon_cov).norm() / cov_norm
                       : std::numeric_limits<double>::quiet_NaN();
    }
    io::write_json(ctx.dir / "recheck.json", meta);
    ctx.record["seeds"] = Json::array({std::to_string(base.seed())});
    ctx.record["model_runs"] = {{"evaluations", 2 * (ensemble.q_succeeded + ensemble.q_failed)},
                                {"failures", ensemble.q_failed}};
  });
}

namespace {

Json gaussian_json(const GaussianModeld& g, const Eigen::VectorXd& map) {
  return {{"mean", io::to_json(g.mean())},
          {"covariance", io::to_json(g.covariance())},
          {"sd", io::to_json(Eigen::VectorXd(g.covariance().diagonal().cwiseSqrt()))},
          {"map", io::to_json(map)}};
}

Json sampled_vs_analytic(const Chain& chain, const GaussianModeld& analytic) {
  const Eigen::VectorXd mean = chain.samples.rowwise().mean();
  const Eigen::MatrixXd centered = chain.samples.colwise() - mean;
  const Eigen::MatrixXd cov = centered * centered.transpose() / double(chain.size() - 1);
  const Eigen::VectorXd sd = analytic.covariance().diagonal().cwiseSqrt();
  const Eigen::VectorXd mean_delta = (mean - analytic.mean()).cwiseQuotient(sd);
  // Entries are scaled by sqrt(C_ii C_jj) so that zero off-diagonals stay defined.
  const Eigen::MatrixXd cov_rel = (cov - analytic.covariance()).cwiseQuotient(sd * sd.transpose());
  return {{"samples", chain.size()},
          {"sample_mean", io::to_json(mean)},
          {"sample_covariance", io::to_json(cov)},
          {"mean_delta_in_sd", io::to_json(mean_delta)},
          {"max_abs_mean_delta_in_sd", mean_delta.cwiseAbs().maxCoeff()},
          {"covariance_relative_delta", io::to_json(cov_rel)},
          {"max_abs_covariance_relative_delta", cov_rel.cwiseAbs().maxCoeff()}};
}

}  // namespace

StageStatus Pipeline::oracle() {
  if (cfg_.model.kind != ModelKind::polynomial)
    throw ConfigError("oracle: closed-form posteriors need model.kind polynomial, got " + to_string(cfg_.model.kind));
  if (cfg_.prior.kind != PriorSpec::Kind::gaussian) throw ConfigError("oracle: closed-form posteriors need a gaussian prior");
  auto& st = ready();
  const Eigen::VectorXd y = observed_data();
  const Json manifest = detail_pipeline::load_manifest(cfg_, hash_);
  std::optional<Chain> naive_chain, bae_chain;
  if (detail_pipeline::stage_complete(manifest, "naive")) naive_chain = load_chain("naive");
  if (detail_pipeline::stage_complete(manifest, "bae")) bae_chain = load_chain("bae");
  return run_stage(cfg_, hash_, st.manifest, log_, "oracle", [&](StageContext& ctx) {
    const auto& p = cfg_.model.polynomial;
    const auto pair = PolynomialPair::make(p.points, p.order, p.identical ? 1 : p.kept, p.t0, p.t1);
    const LinearProblem<double> problem{pair.fine, p.identical ? pair.fine : pair.coarse,
                                        st.prior->gaussian_model(), *st.noise, y};
    const auto form = cfg_.bae.total_error_form;
    const auto post = analytic_posteriors(problem, form);

    Json out = {{"config_hash", hash_},
                {"total_error_form", form == TotalErrorForm::with_noise ? "with-noise" : "error-only"},
                {"naive", gaussian_json(post.naive, map_estimate(problem, PosteriorVariant::naive, form))},
                {"bae", gaussian_json(post.bae, map_estimate(problem, PosteriorVariant::bae, form))},
                {"true", gaussian_json(post.truth, map_estimate(problem, PosteriorVariant::truth, form))},
                {"nu_star", io::to_json(post.nu_star)},
                {"gamma_nu", io::to_json(post.gamma_nu)}};

    const Eigen::MatrixXd& prior_cov = problem.prior.covariance();
    const bool diagonal_prior = (prior_cov - Eigen::MatrixXd(prior_cov.diagonal().asDiagonal())).norm() == 0.0;
    if (!p.identical && diagonal_prior) {
      double worst = 0;
      for (Eigen::Index i = 0; i < p.kept; ++i) {
        worst = std::max(worst, std::abs(post.bae.mean()(i) - post.truth.mean()(i)));
        worst = std::max(worst, std::abs(post.bae.covariance()(i, i) - post.truth.covariance()(i, i)));
      }
      out["projection_identity"] = {{"coordinates", p.kept},
                                    {"max_abs_difference", worst},
                                    {"tolerance", 1e-10},
                                    {"pass", worst <= 1e-10}};
    } else {
      out["projection_identity"] = {{"applicable", false}};
    }

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(post.bae.covariance() - post.naive.covariance(),
                                                             Eigen::EigenvaluesOnly);
    out["variance_inflation"] = {{"min_eigenvalue", eig.eigenvalues().minCoeff()},
                                 {"pass", eig.eigenvalues().minCoeff() >= -1e-8}};

    Json sampled = Json::object();
    if (naive_chain) sampled["naive"] = sampled_vs_analytic(*naive_chain, post.naive);
    if (bae_chain) sampled["bae"] = sampled_vs_analytic(*bae_chain, post.bae);
    out["sampled"] = sampled;
    io::write_json(ctx.dir / "oracle.json", out);
  });
}

namespace {

struct Histogram {
  double lower = 0, upper = 0;
  std::vector<long long> counts;
};

std::vector<long long> bin_counts(const Eigen::RowVectorXd& x, double lower, double upper, int bins) {
  std::vector<long long> counts(static_cast<std::size_t>(bins), 0);
  const double width = (upper - lower) / bins;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    auto b = static_cast<long long>(std::floor((x(i) - lower) / width));
    b = std::clamp<long long>(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

Json posterior_summary(const Chain& chain, const std::optional<Eigen::VectorXd>& truth,
                       const std::vector<std::string>& names) {
  const Eigen::VectorXd t = truth ? *truth : Eigen::VectorXd::Zero(chain.dim());
  const auto feas = feasibility_summary(chain, t);
  Json params = Json::array();
  for (std::size_t k = 0; k < feas.size(); ++k) {
    Json intervals = Json::array();
    for (const auto& ci : feas[k].intervals) {
      Json j = {{"level", ci.level}, {"lower", ci.lower}, {"upper", ci.upper}};
      if (truth) j["contains_truth"] = ci.contains_truth;
      intervals.push_back(j);
    }
    params.push_back({{"parameter", names[k]}, {"mean", feas[k].mean}, {"sd", feas[k].sd}, {"intervals", intervals}});
  }
  return {{"samples", chain.size()}, {"acceptance_rate", chain.acceptance_rate()}, {"parameters", params}};
}

bool interval_contains(const Json& summary, std::size_t k, double level) {
  for (const auto& ci : summary["parameters"][k]["intervals"])
    if (ci["level"].get<double>() == level) return ci["contains_truth"].get<bool>();
  return false;
}

}  // namespace

StageStatus Pipeline::report() {
  auto& st = ready();
  const Json manifest = detail_pipeline::load_manifest(cfg_, hash_);
  const bool have_naive = detail_pipeline::stage_complete(manifest, "naive");
  const bool have_bae = detail_pipeline::stage_complete(manifest, "bae");
  if (!have_naive && !have_bae) throw StageOrderError("report needs at least one chain: run 'naive' or 'bae' first");
  std::optional<Chain> naive_chain, bae_chain;
  if (have_naive) naive_chain = load_chain("naive");
  if (have_bae) bae_chain = load_chain("bae");

  return run_stage(cfg_, hash_, st.manifest, log_, "report", [&](StageContext& ctx) {
    const auto& names = st.models->parameter_names;
    const auto d = static_cast<Eigen::Index>(names.size());
    const auto truth = known_truth(cfg_);
    const PriorSpec& prior = *st.prior;

    RngStream rng = RngStream(cfg_.seed).substream("report-prior");
    Eigen::MatrixXd prior_draws(d, cfg_.report.prior_draws);
    for (Eigen::Index j = 0; j < prior_draws.cols(); ++j) prior_draws.col(j) = prior.sample(rng);

    // Histograms on a common range per parameter.
    std::string hist = "parameter,bin,lower,upper,prior,naive,bae\r\n";
    const int bins = cfg_.report.bins;
    for (Eigen::Index k = 0; k < d; ++k) {
      double lo, hi;
      if (prior.kind() == PriorSpec::Kind::uniform_box) {
        lo = prior.lower()(k);
        hi = prior.upper()(k);
      } else {
        lo = prior_draws.row(k).minCoeff();
        hi = prior_draws.row(k).maxCoeff();
        for (const auto* c : {naive_chain ? &*naive_chain : nullptr, bae_chain ? &*bae_chain : nullptr})
          if (c) {
            lo = std::min(lo, c->samples.row(k).minCoeff());
            hi = std::max(hi, c->samples.row(k).maxCoeff());
          }
      }
      if (!(hi > lo)) hi = lo + 1.0;
      const auto pc = bin_counts(prior_draws.row(k), lo, hi, bins);
      std::vector<long long> nc, bc;
      if (naive_chain) nc = bin_counts(naive_chain->samples.row(k), lo, hi, bins);
      if (bae_chain) bc = bin_counts(bae_chain->samples.row(k), lo, hi, bins);
      const double width = (hi - lo) / bins;
      for (int b = 0; b < bins; ++b) {
        const auto i = static_cast<std::size_t>(b);
        hist += io::csv_field(names[static_cast<std::size_t>(k)]) + "," + std::to_string(b + 1) + "," +
                io::format_double(lo + b * width) + "," + io::format_double(b + 1 == bins ? hi : lo + (b + 1) * width) +
                "," + std::to_string(pc[i]) + "," + (nc.empty() ? "" : std::to_string(nc[i])) + "," +
                (bc.empty() ? "" : std::to_string(bc[i])) + "\r\n";
      }
    }
    io::write_text_atomic(ctx.dir / "histograms.csv", hist);

    Json report = {{"config_hash", hash_}, {"parameters", names}};
    report["truth"] = truth ? io::to_json(*truth) : Json(nullptr);
    report["prior"] = {{"kind", prior.kind() == PriorSpec::Kind::gaussian ? "gaussian" : "uniform-box"},
                       {"mean", io::to_json(prior.mean())},
                       {"sd", io::to_json(prior.sd())}};
    Json naive_summary = naive_chain ? posterior_summary(*naive_chain, truth, names) : Json(nullptr);
    Json bae_summary = bae_chain ? posterior_summary(*bae_chain, truth, names) : Json(nullptr);
    report["posteriors"] = {{"naive", naive_summary}, {"bae", bae_summary}};

    // Feasibility table and flags.
    std::string feas = "parameter,truth,identifiable,naive_mean,naive_sd,naive_in_95,bae_mean,bae_sd,bae_in_99\r\n";
    Json flags = Json::object();
    if (truth) {
      Json naive_excludes = Json::array(), corrected = Json::array(), bae_misses = Json::array();
      for (Eigen::Index k = 0; k < d; ++k) {
        const auto i = static_cast<std::size_t>(k);
        const bool identifiable =
            naive_chain && naive_summary["parameters"][i]["sd"].get<double>() < 0.5 * prior.sd()(k);
        const bool n95 = naive_chain && interval_contains(naive_summary, i, 0.95);
        const bool b99 = bae_chain && interval_contains(bae_summary, i, 0.99);
        if (naive_chain && !n95) naive_excludes.push_back(names[i]);
        if (bae_chain && !b99) bae_misses.push_back(names[i]);
        if (naive_chain && bae_chain && !n95 && b99) corrected.push_back(names[i]);
        auto field = [](const Json& s, std::size_t k, const char* key) {
          return s.is_null() ? std::string() : io::format_double(s["parameters"][k][key].get<double>());
        };
        feas += io::csv_field(names[i]) + "," + io::format_double((*truth)(k)) + "," +
                (naive_chain ? (identifiable ? "1" : "0") : "") + "," + field(naive_summary, i, "mean") + "," +
                field(naive_summary, i, "sd") + "," + (naive_chain ? (n95 ? "1" : "0") : "") + "," +
                field(bae_summary, i, "mean") + "," + field(bae_summary, i, "sd") + "," +
                (bae_chain ? (b99 ? "1" : "0") : "") + "\r\n";
        if (identifiable) flags["identifiable"].push_back(names[i]);
      }
      if (!flags.contains("identifiable")) flags["identifiable"] = Json::array();
      flags["naive_excludes_truth_95"] = naive_excludes;
      flags["bae_excludes_truth_99"] = bae_misses;
      flags["naive_infeasible_bae_feasible"] = corrected;
      if (bae_chain) flags["bae_contains_truth_99_all"] = bae_misses.empty();
    }
    io::write_text_atomic(ctx.dir / "feasibility.csv", feas);
    report["feasibility"] = flags;

    if (naive_chain && bae_chain) {
      Json ratio = Json::array();
      bool all = true;
      for (std::size_t k = 0; k < names.size(); ++k) {
        const double r = bae_summary["parameters"][k]["sd"].get<double>() /
                         naive_summary["parameters"][k]["sd"].get<double>();
        ratio.push_back(r);
        all = all && r >= 1.0;
      }
      report["variance_inflation"] = {{"bae_over_naive_sd", ratio}, {"all_at_least_one", all}};
    }

    if (detail_pipeline::stage_complete(manifest, "errors")) {
      const Json meta = io::read_json(cfg_.output / "errors" / "error_meta.json");
      report["error_statistics"] = {{"source", meta["source"]},
                                    {"q_requested", meta["q_requested"]},
                                    {"q_succeeded", meta["q_succeeded"]},
                                    {"q_failed", meta["q_failed"]}};
    }
    if (detail_pipeline::stage_complete(manifest, "recheck")) {
      const Json meta = io::read_json(cfg_.output / "recheck" / "recheck.json");
      if (meta.contains("relative_cov_difference"))
        report["recheck"] = {{"mean_difference_norm", meta["mean_difference_norm"]},
                             {"relative_cov_difference", meta["relative_cov_difference"]}};
    }

    Json telemetry = Json::object();
    std::string timings = "stage,started,finished,wall_seconds\r\n";
    for (auto it = manifest["stages"].begin(); it != manifest["stages"].end(); ++it) {
      if (it.value().contains("model_runs")) telemetry[it.key()] = it.value()["model_runs"];
      timings += it.key() + "," + it.value()["started"].get<std::string>() + "," +
                 it.value()["finished"].get<std::string>() + "," +
                 io::format_double(it.value()["wall_seconds"].get<double>()) + "\r\n";
    }
    report["failure_telemetry"] = telemetry;
    io::write_text_atomic(ctx.dir / "timings.csv", timings);
    ctx.volatile_files.push_back("timings.csv");
    report["files"] = {"histograms.csv", "feasibility.csv", "timings.csv"};
    io::write_json(ctx.dir / "report.json", report);
    ctx.record["seeds"] = Json::array({std::to_string(RngStream(cfg_.seed).substream("report-prior").seed())});
  });
}

}  // namespace bae::pipeline
