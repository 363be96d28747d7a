// Command-line front end of the inversion pipeline.
//
//   bae <verb> --config run.yaml [--output DIR] [--seed N] [--workers N] [--profile desk|paper]
//
// Exit status: 0 success, 2 invalid configuration, 3 stage run out of order,
// 4 error-ensemble budget exhausted, 1 any other failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "bae/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::string> output;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> profile;
};

bae::pipeline::Overrides overrides_from(const GlobalOptions& g) {
  bae::pipeline::Overrides o;
  if (g.output) o.output = std::filesystem::absolute(*g.output);
  o.seed = g.seed;
  o.workers = g.workers;
  if (g.profile) o.profile = bae::pipeline::parse_profile(*g.profile);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian approximation error inversion pipeline"};
  app.require_subcommand(1, 1);
  GlobalOptions g;
  app.add_option("--config", g.config, "YAML run configuration")->required()->check(CLI::ExistingFile);
  app.add_option("--output", g.output, "output directory (overrides the config)");
  app.add_option("--seed", g.seed, "root seed (overrides the config)");
  app.add_option("--workers", g.workers, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
  app.add_option("--profile", g.profile, "desk or paper defaults")->check(CLI::IsMember({"desk", "paper"}));

  std::string which = "bae";
  app.add_subcommand("synthesize", "simulate data from the configured truth on the fine model");
  app.add_subcommand("naive", "sample the naive posterior (coarse model, noise-only likelihood)");
  app.add_subcommand("errors", "build the approximation-error ensemble and its statistics");
  app.add_subcommand("bae", "sample the posterior under the total-error likelihood");
  auto* predict = app.add_subcommand("predict", "posterior predictive quantiles");
  predict->add_option("--which", which, "posterior to use")->check(CLI::IsMember({"naive", "bae"}));
  app.add_subcommand("recheck", "recompute error statistics over the bae posterior");
  app.add_subcommand("oracle", "closed-form posteriors for the polynomial problem");
  app.add_subcommand("report", "histograms, feasibility table and telemetry");

  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    auto cfg = bae::pipeline::load_config(g.config, overrides_from(g));
    bae::pipeline::Pipeline pipeline(std::move(cfg), std::cerr);
    if (verb == "synthesize") pipeline.synthesize();
    else if (verb == "naive") pipeline.naive();
    else if (verb == "errors") pipeline.errors();
    else if (verb == "bae") pipeline.bae();
    else if (verb == "predict") pipeline.predict(which);
    else if (verb == "recheck") pipeline.recheck();
    else if (verb == "oracle") pipeline.oracle();
    else if (verb == "report") pipeline.report();
    return 0;
  } catch (const bae::ConfigError& e) {
    std::cerr << "bae " << verb << ": configuration error: " << e.what() << "\n";
    return 2;
  } catch (const bae::StageOrderError& e) {
    std::cerr << "bae " << verb << ": " << e.what() << "\n";
    return 3;
  } catch (const bae::BudgetExhaustedError& e) {
    std::cerr << "bae " << verb << ": " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "bae " << verb << ": " << e.what() << "\n";
    return 1;
  }
}
