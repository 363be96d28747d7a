#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bae/pipeline.hpp"

using namespace bae;
using namespace bae::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bae_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string small_poly(const fs::path& out, const std::string& extra = "", int seed = 5) {
  std::ostringstream y;
  y << "output: " << out.string() << "\n"
    << "seed: " << seed << "\n"
    << R"(model:
  kind: polynomial
prior:
  kind: gaussian
  mean: [1.0, 1.0]
  sd: 1.0
noise:
  multilevel:
    blocks: [10, 10, 10]
    delta_e: 1.2
    c: 0.001
mcmc:
  walkers: 8
  steps: 400
  burn_in: 100
bae:
  q: 50
data:
  synthesize: true
  truth: [0.2, 2.0]
report:
  prior_draws: 500
)" << extra;
  return y.str();
}

PipelineConfig config_from(const std::string& yaml) { return parse_config(yaml, fs::temp_directory_path()); }

std::map<std::string, std::string> manifest_checksums(const fs::path& manifest) {
  std::map<std::string, std::string> out;
  const auto j = io::read_json(manifest);
  for (const auto& [stage, entry] : j["stages"].items())
    for (const auto& f : entry["files"])
      if (!f.value("volatile", false)) out[f["path"].get<std::string>()] = f["sha256"].get<std::string>();
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BAE_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config validation") {
  const auto out = fresh_dir("config");
  SUBCASE("a complete config parses") {
    const auto cfg = config_from(small_poly(out));
    CHECK(cfg.seed == 5);
    CHECK(cfg.parameter_dim() == 2);
    CHECK(cfg.mcmc.walkers == 8);
  }
  SUBCASE("unknown keys are rejected") {
    CHECK_THROWS_AS(config_from(small_poly(out, "surprise: 1\n")), ConfigError);
    CHECK_THROWS_AS(config_from(small_poly(out) + "mcmc_extra:\n  x: 1\n"), ConfigError);
  }
  SUBCASE("seed is required") {
    std::string y = small_poly(out);
    y.replace(y.find("seed: 5\n"), 8, "");
    CHECK_THROWS_AS(config_from(y), ConfigError);
  }
  SUBCASE("truth length must match the parameter dimension") {
    std::string y = small_poly(out);
    y.replace(y.find("[0.2, 2.0]"), 10, "[0.2]");
    CHECK_THROWS_AS(config_from(y), ConfigError);
  }
  SUBCASE("a missing data file is reported before any model runs") {
    std::string y = small_poly(out);
    y.replace(y.find("  synthesize: true\n  truth: [0.2, 2.0]\n"), 37, "  path: does_not_exist.csv\n");
    CHECK_THROWS_AS(config_from(y), ConfigError);
  }
  SUBCASE("overrides replace the file values") {
    Overrides o;
    o.seed = 99;
    const auto cfg = parse_config(small_poly(out), fs::temp_directory_path(), o);
    CHECK(cfg.seed == 99);
  }
  SUBCASE("the config hash ignores workers and output but not the seed") {
    auto a = config_from(small_poly(out));
    auto b = a;
    b.workers = 7;
    b.output = "/elsewhere";
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 6;
    CHECK(config_hash(a) != config_hash(b));
  }
}

TEST_CASE("stages enforce their order") {
  const auto out = fresh_dir("order");
  std::ostringstream log;
  Pipeline p(config_from(small_poly(out)), log);
  CHECK_THROWS_AS(p.naive(), StageOrderError);
  CHECK_THROWS_AS(p.report(), StageOrderError);
  p.synthesize();
  CHECK_THROWS_AS(p.bae(), StageOrderError);
  CHECK_THROWS_AS(p.recheck(), StageOrderError);
  CHECK_THROWS_AS(p.predict("bae"), StageOrderError);
  CHECK_THROWS_AS(p.predict("other"), ConfigError);
}

TEST_CASE("a different config in the same output directory is refused") {
  const auto out = fresh_dir("conflict");
  {
    std::ostringstream log;
    Pipeline p(config_from(small_poly(out)), log);
    p.synthesize();
  }
  std::ostringstream log;
  CHECK_THROWS_AS(Pipeline(config_from(small_poly(out, "", 6)), log), ConfigError);
}

TEST_CASE("full polynomial run: idempotence, reproducibility and outputs") {
  const auto out_a = fresh_dir("full_a");
  const auto out_b = fresh_dir("full_b");
  auto run_all = [](const fs::path& out) {
    std::ostringstream log;
    Pipeline p(config_from(small_poly(out)), log);
    CHECK(p.synthesize() == StageStatus::ran);
    CHECK(p.naive() == StageStatus::ran);
    CHECK(p.errors() == StageStatus::ran);
    CHECK(p.bae() == StageStatus::ran);
    CHECK(p.predict("naive") == StageStatus::ran);
    CHECK(p.predict("bae") == StageStatus::ran);
    CHECK(p.recheck() == StageStatus::ran);
    CHECK(p.oracle() == StageStatus::ran);
    CHECK(p.report() == StageStatus::ran);
  };
  run_all(out_a);
  const auto first = manifest_checksums(out_a / "manifest.json");
  CHECK(first.size() > 20);

  SUBCASE("rerunning skips every stage and leaves files untouched") {
    std::ostringstream log;
    Pipeline p(config_from(small_poly(out_a)), log);
    CHECK(p.synthesize() == StageStatus::skipped);
    CHECK(p.naive() == StageStatus::skipped);
    CHECK(p.errors() == StageStatus::skipped);
    CHECK(p.bae() == StageStatus::skipped);
    CHECK(p.report() == StageStatus::skipped);
    for (const auto& [path, sha] : first) CHECK(io::sha256_file(out_a / path) == sha);
  }
  SUBCASE("a damaged file makes its stage run again") {
    const fs::path victim = out_a / "naive" / "chain_0.csv";
    REQUIRE(fs::exists(victim));
    io::write_text_atomic(victim, "walker,step\n");
    std::ostringstream log;
    Pipeline p(config_from(small_poly(out_a)), log);
    CHECK(p.naive() == StageStatus::ran);
    CHECK(io::sha256_file(victim) == first.at("naive/chain_0.csv"));
  }
  SUBCASE("a second directory gets byte-identical artifacts") {
    run_all(out_b);
    CHECK(manifest_checksums(out_b / "manifest.json") == first);
  }
  SUBCASE("report contents") {
    const auto report = io::read_json(out_a / "report" / "report.json");
    CHECK(report["posteriors"]["naive"]["samples"] == 8 * 300);
    const auto rows = io::parse_csv(io::read_text(out_a / "report" / "histograms.csv"));
    REQUIRE(rows.size() > 1);
    CHECK(rows[0] == std::vector<std::string>{"parameter", "bin", "lower", "upper", "prior", "naive", "bae"});
    std::map<std::string, double> naive_total;
    for (std::size_t r = 1; r < rows.size(); ++r) naive_total[rows[r][0]] += std::stod(rows[r][5]);
    for (const auto& [name, total] : naive_total) CHECK(total == 8 * 300);
  }
  SUBCASE("oracle output") {
    const auto oracle = io::read_json(out_a / "oracle" / "oracle.json");
    CHECK(oracle["projection_identity"]["pass"] == true);
    CHECK(oracle["variance_inflation"]["pass"] == true);
  }
}

TEST_CASE("report with only the naive chain leaves the bae columns empty") {
  const auto out = fresh_dir("naive_only");
  std::ostringstream log;
  Pipeline p(config_from(small_poly(out)), log);
  p.synthesize();
  p.naive();
  p.report();
  const auto rows = io::parse_csv(io::read_text(out / "report" / "histograms.csv"));
  REQUIRE(rows.size() > 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    REQUIRE(rows[r].size() == 7);
    CHECK(rows[r][6].empty());
  }
}

TEST_CASE("identical fine and coarse models give three equal oracle Gaussians") {
  const auto out = fresh_dir("identical");
  std::string y = small_poly(out);
  y.replace(y.find("  kind: polynomial\n"), 19, "  kind: polynomial\n  polynomial:\n    identical: true\n");
  std::ostringstream log;
  Pipeline p(config_from(y), log);
  p.synthesize();
  p.oracle();
  const auto o = io::read_json(out / "oracle" / "oracle.json");
  for (const char* v : {"bae", "true"}) {
    const Eigen::VectorXd a = io::vector_from_json(o["naive"]["mean"]);
    const Eigen::VectorXd b = io::vector_from_json(o[v]["mean"]);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::MatrixXd ca = io::matrix_from_json(o["naive"]["covariance"]);
    const Eigen::MatrixXd cb = io::matrix_from_json(o[v]["covariance"]);
    CHECK((ca - cb).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("minimal error ensemble with q = 2 and the prior as source") {
  const auto out = fresh_dir("q2");
  std::string y = small_poly(out);
  y.replace(y.find("  q: 50\n"), 8, "  q: 2\n  source: prior-based\n");
  std::ostringstream log;
  Pipeline p(config_from(y), log);
  p.synthesize();
  p.errors();
  const auto stats = p.load_error_statistics();
  CHECK(stats.q_succeeded == 2);
  CHECK(stats.epsilon_cov.rows() == 30);
  CHECK_FALSE(fs::exists(out / "errors" / "normality.csv"));
  CHECK(io::read_json(out / "errors" / "error_meta.json")["source"] == "prior-based");
}

TEST_CASE("command-line exit codes") {
  const auto out = fresh_dir("cli");
  const fs::path cfg = out / "config.yaml";
  std::ofstream(cfg) << small_poly(out / "run");
  CHECK(run_cli("--config " + cfg.string() + " synthesize") == 0);
  CHECK(run_cli("--config " + cfg.string() + " bae") == 3);
  const fs::path bad = out / "bad.yaml";
  std::ofstream(bad) << small_poly(out / "run", "nonsense: true\n");
  CHECK(run_cli("--config " + bad.string() + " synthesize") == 2);
  CHECK(run_cli("--config " + cfg.string() + " predict --which sideways") != 0);
}
