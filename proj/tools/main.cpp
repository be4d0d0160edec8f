// landchange command-line tool.
//
// Every subcommand accepts --config FILE: a flat "key = value" file whose keys
// are long option names. Values on the command line override the file.

#include "landchange/commands.hpp"
#include "landchange/error.hpp"
#include "landchange/io.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace lc = landchange;

namespace {

struct HyperFlags {
  lc::Hyperparams h;
  int k = 0;
  std::string scaling = "inverse";
  std::string dirichlet;

  void add(CLI::App* app) {
    app->add_option("--pi0", h.pi0, "Prior probability of a change")->capture_default_str();
    app->add_option("--piR", h.piR, "Prior probability of recovery given a change")->capture_default_str();
    app->add_option("--kappa0", h.kappa0, "Background variance inflation")->capture_default_str();
    app->add_option("--kappac", h.kappac, "Change-class variance inflation")->capture_default_str();
    app->add_option("--epsilon", h.epsilon, "Convergence threshold on |dQ| per pixel")->capture_default_str();
    app->add_option("--K", k, "Compress bands to K spectral components (0 = off)")->capture_default_str();
    app->add_option("--pca-scaling", scaling, "Component scaling")
        ->check(CLI::IsMember({"inverse", "inverse-sqrt"}))
        ->capture_default_str();
    app->add_option("--dirichlet", dirichlet, "Comma-separated Dirichlet weights (default 1 + 1/|C|)");
  }

  lc::Hyperparams resolve() const {
    lc::Hyperparams out = h;
    if (k < 0) throw lc::ValidationError("--K must be >= 0");
    if (k > 0) out.compression_rank = k;
    out.compression_scaling = scaling == "inverse" ? lc::PcaScaling::Inverse : lc::PcaScaling::InverseSqrt;
    out.dirichlet.clear();
    std::size_t start = 0;
    while (start < dirichlet.size()) {
      auto end = dirichlet.find(',', start);
      if (end == std::string::npos) end = dirichlet.size();
      out.dirichlet.push_back(lc::parse_double(std::string_view(dirichlet).substr(start, end - start)));
      start = end + 1;
    }
    return out;
  }
};

std::vector<double> parse_levels(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const auto field = std::string_view(text).substr(start, end - start);
    if (field.empty()) throw lc::ValidationError("empty missing level in '" + text + "'");
    out.push_back(lc::parse_double(field));
    start = end + 1;
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Expands "--config FILE" into option tokens placed ahead of the user's
/// own arguments, so later command-line values win.
std::vector<std::string> expand_config(const CLI::App& app, const std::vector<std::string>& args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const auto* s : app.get_subcommands({})) {
    if (s->get_name() == args.front()) sub = s;
  }
  if (sub == nullptr) return args;

  std::string path;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[++i];
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args.front()};
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw lc::IoError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw lc::ValidationError(path + ": line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      const auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      const auto* opt = sub->get_option_no_throw("--" + key);
      if (opt == nullptr || key == "config") {
        throw lc::ValidationError(path + ": line " + std::to_string(lineno) + ": unknown key '" + key + "' for " +
                                  sub->get_name());
      }
      if (opt->get_expected_min() == 0) {
        if (value == "true" || value == "1") {
          out.push_back("--" + key);
        } else if (value != "false" && value != "0") {
          throw lc::ValidationError(path + ": line " + std::to_string(lineno) + ": '" + key + "' takes true or false");
        }
      } else {
        out.push_back("--" + key + "=" + value);
      }
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian change-point detection for land-cover time series", "landchange"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", std::string(LANDCHANGE_VERSION));
  std::string config_unused;

  // fit
  lc::FitConfig fit;
  HyperFlags fit_hyper;
  std::string posterior = "change-segment";
  bool no_impute = false;
  auto* fit_cmd = app.add_subcommand("fit", "Fit change points to a dataset file or a directory of datasets");
  fit_cmd->add_option("--config", config_unused, "Key = value config file");
  fit_cmd->add_option("--library", fit.library, "Class library JSON")->required();
  fit_cmd->add_option("--data", fit.dataset, "Dataset file or directory")->required();
  fit_cmd->add_option("--out", fit.output, "Output directory")->required();
  fit_hyper.add(fit_cmd);
  fit_cmd->add_option("--threads", fit.em.threads, "Worker threads")->capture_default_str();
  fit_cmd->add_option("--max-iters", fit.em.max_iterations, "Iteration cap")->capture_default_str();
  fit_cmd->add_option("--seed", fit.seed, "Recorded in metadata; fitting is deterministic")->capture_default_str();
  fit_cmd->add_option("--alpha-tol", fit.em.alpha_tolerance, "Also require max |d alpha| <= this to stop");
  fit_cmd->add_flag("--raw-delta-q", fit.em.raw_delta_q, "Compare |dQ| to epsilon without dividing by pixel count");
  fit_cmd->add_option("--posterior", posterior, "Class posterior conditioning")
      ->check(CLI::IsMember({"change-segment", "full-series"}))
      ->capture_default_str();
  fit_cmd->add_option("--jitter", fit.em.factor.jitter, "Diagonal jitter for a failed Cholesky")->capture_default_str();
  fit_cmd->add_flag("--no-impute", no_impute, "Skip imputed.csv");
  fit_cmd->add_flag("--expand-missing", fit.expand_missing, "Mark a time missing in all bands if any band is missing");

  // simulate
  lc::SimulateConfig sim;
  std::string levels = "0.2,0.3,0.4,0.5";
  std::string pattern = "uniform";
  bool binary = false;
  auto* sim_cmd = app.add_subcommand("simulate", "Write simulated batches with truth sidecars");
  sim_cmd->add_option("--config", config_unused, "Key = value config file");
  sim_cmd->add_option("--library", sim.library, "Class library JSON (default: built-in synthetic library)");
  sim_cmd->add_option("--pool", sim.pool_dataset, "Exemplar dataset to resample pixel-years from");
  sim_cmd->add_option("--pool-truth", sim.pool_truth, "Truth sidecar labeling the exemplar dataset");
  sim_cmd->add_option("--out", sim.output, "Output directory")->required();
  sim_cmd->add_option("--missing", levels, "Comma-separated minimum missing fractions")->capture_default_str();
  sim_cmd->add_option("--replications", sim.replications, "Replications per batch")->capture_default_str();
  sim_cmd->add_option("--n-change", sim.n_change, "Change pixels per replication")->capture_default_str();
  sim_cmd->add_option("--n-nochange", sim.n_nochange, "No-change pixels per replication")->capture_default_str();
  sim_cmd->add_option("--years", sim.years, "Years per pixel (J)")->capture_default_str();
  sim_cmd->add_option("--seed", sim.seed, "Base seed")->capture_default_str();
  sim_cmd->add_option("--recovery", sim.recovery_probability, "Recovery probability for change pixels")
      ->capture_default_str();
  sim_cmd->add_option("--pattern", pattern, "Missingness pattern")
      ->check(CLI::IsMember({"uniform", "year-end-runs"}))
      ->capture_default_str();
  sim_cmd->add_option("--kappa0", sim.kappa0, "Background variance inflation")->capture_default_str();
  sim_cmd->add_option("--kappac", sim.kappac, "Change-class variance inflation")->capture_default_str();
  sim_cmd->add_flag("--binary", binary, "Write binary datasets");

  // evaluate
  lc::EvaluateConfig eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score fits against truth sidecars or reference fractions");
  eval_cmd->add_option("--config", config_unused, "Key = value config file");
  eval_cmd->add_option("--fit", eval.fit, "Fit output directory")->required();
  eval_cmd->add_option("--truth", eval.truth, "Truth sidecar or simulate output directory");
  eval_cmd->add_option("--reference", eval.reference, "Reference fractions CSV");
  eval_cmd->add_option("--out", eval.output, "Report directory")->required();
  eval_cmd->add_flag("--published-check", eval.published_check, "Compare batch means with the published accuracies");
  eval_cmd->add_option("--tolerance", eval.tolerance, "Tolerance for --published-check")->capture_default_str();
  eval_cmd->add_flag("--force", eval.force, "Ignore config hash mismatches");

  // train-classes
  lc::TrainConfig train;
  auto* train_cmd = app.add_subcommand("train-classes", "Estimate a class library from labeled complete pixels");
  train_cmd->add_option("--config", config_unused, "Key = value config file");
  train_cmd->add_option("--data", train.dataset, "Fully observed dataset")->required();
  train_cmd->add_option("--labels", train.labels, "CSV pixel,class[,label]")->required();
  train_cmd->add_option("--background", train.background_id, "Background class id")->capture_default_str();
  train_cmd->add_option("--out", train.output, "Library JSON to write")->required();
  train_cmd->add_option("--tol", train.flipflop.tolerance, "Flip-flop relative tolerance")->capture_default_str();
  train_cmd->add_option("--max-iters", train.flipflop.max_iterations, "Flip-flop iteration cap")->capture_default_str();

  // baseline
  lc::BaselineConfig base;
  HyperFlags base_hyper;
  auto* base_cmd = app.add_subcommand("baseline", "Threshold baseline change map (simple stub, not a published method)");
  base_cmd->add_option("--config", config_unused, "Key = value config file");
  base_cmd->add_option("--library", base.library, "Class library JSON")->required();
  base_cmd->add_option("--data", base.dataset, "Dataset file")->required();
  base_cmd->add_option("--out", base.output, "Output directory")->required();
  base_cmd->add_option("--threshold", base.threshold, "Flag years below this quantile of background log-likelihood, in [0, 1)")->capture_default_str();
  base_cmd->add_flag("--expand-missing", base.expand_missing, "Mark a time missing in all bands if any band is missing");
  base_hyper.add(base_cmd);

  // demo-library
  std::string demo_out;
  auto* demo_cmd = app.add_subcommand("demo-library", "Write the built-in synthetic class library");
  demo_cmd->add_option("--out", demo_out, "Library JSON to write")->required();

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = expand_config(app, args);
  } catch (const lc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(dynamic_cast<const lc::IoError*>(&e) ? lc::ExitCode::Io : lc::ExitCode::Validation);
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(lc::ExitCode::Validation);
  }

  const auto code = lc::guarded(
      [&]() -> lc::ExitCode {
        if (*fit_cmd) {
          fit.hyper = fit_hyper.resolve();
          fit.em.posterior = posterior == "full-series" ? lc::PosteriorMode::FullSeries : lc::PosteriorMode::ChangeSegment;
          fit.em.impute = !no_impute;
          return lc::run_fit(fit, std::cout);
        }
        if (*sim_cmd) {
          sim.missing_levels = parse_levels(levels);
          sim.pattern = pattern == "uniform" ? lc::MissingPattern::Uniform : lc::MissingPattern::YearEndRuns;
          sim.format = binary ? lc::DatasetFormat::Binary : lc::DatasetFormat::Text;
          return lc::run_simulate(sim, std::cout);
        }
        if (*eval_cmd) return lc::run_evaluate(eval, std::cout);
        if (*train_cmd) return lc::run_train_classes(train, std::cout);
        if (*base_cmd) {
          base.hyper = base_hyper.resolve();
          return lc::run_baseline(base, std::cout);
        }
        return lc::run_demo_library(demo_out, std::cout);
      },
      std::cerr);
  return static_cast<int>(code);
}
