#pragma once

// Subcommand implementations behind the landchange CLI. Each run_* validates
// its config before any compute and returns a process exit code.

#include "landchange/em.hpp"
#include "landchange/io.hpp"
#include "landchange/metrics.hpp"
#include "landchange/model.hpp"
#include "landchange/simulate.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace landchange {

enum class ExitCode : int {
  Ok = 0,
  Failure = 1,  // unexpected internal error
  Validation = 2,
  NonConvergence = 3,
  Io = 4,
};

/// Ordered key/value echo of a config; also the input to its hash.
using ConfigEcho = std::map<std::string, std::string>;

std::string config_hash(const ConfigEcho& echo);

struct FitConfig {
  std::filesystem::path library;
  /// A dataset file, or a directory searched recursively for datasets.
  std::filesystem::path dataset;
  std::filesystem::path output;
  Hyperparams hyper;
  EmOptions em;
  /// Expand any-band missingness of a time point to all bands.
  bool expand_missing = false;
  std::uint64_t seed = 0;  // recorded only; fitting is deterministic

  /// Thread count is excluded: it does not change results.
  ConfigEcho echo() const;
};

struct SimulateConfig {
  /// Class library for generative mode; the built-in synthetic library
  /// when empty and no pool is given.
  std::filesystem::path library;
  /// Exemplar mode: a dataset whose pixel-years are resampled, labeled by
  /// a truth sidecar (background years vs change years).
  std::filesystem::path pool_dataset;
  std::filesystem::path pool_truth;
  std::filesystem::path output;
  std::vector<double> missing_levels{0.2, 0.3, 0.4, 0.5};
  int replications = 100;
  int n_change = 60;
  int n_nochange = 60;
  int years = 11;
  std::uint64_t seed = 20140101;
  double recovery_probability = 0.3;
  MissingPattern pattern = MissingPattern::Uniform;
  double kappa0 = 5e4;
  double kappac = 5e4;
  DatasetFormat format = DatasetFormat::Text;

  ConfigEcho echo() const;
};

struct EvaluateConfig {
  /// Fit output root (as written by run_fit).
  std::filesystem::path fit;
  /// Truth sidecar file or simulate output directory.
  std::filesystem::path truth;
  /// Reference fractions CSV, for concordance instead of truth.
  std::filesystem::path reference;
  std::filesystem::path output;
  /// Compare batch means with the published CPD accuracies.
  bool published_check = false;
  double tolerance = 0.02;
  /// Skip the config hash consistency check.
  bool force = false;

  ConfigEcho echo() const;
};

struct TrainConfig {
  /// Fully observed dataset with training pixels.
  std::filesystem::path dataset;
  /// CSV "pixel,class[,label]".
  std::filesystem::path labels;
  int background_id = 2;
  std::filesystem::path output;  // library JSON
  FlipFlopOptions flipflop;
};

struct BaselineConfig {
  std::filesystem::path library;
  std::filesystem::path dataset;
  std::filesystem::path output;
  Hyperparams hyper;
  /// Background log-likelihood quantile: 0.05 flags the lowest 5% tail.
  double threshold = 0.05;
  bool expand_missing = false;

  ConfigEcho echo() const;
};

ExitCode run_fit(const FitConfig& config, std::ostream& log);
ExitCode run_simulate(const SimulateConfig& config, std::ostream& log);
ExitCode run_evaluate(const EvaluateConfig& config, std::ostream& log);
ExitCode run_train_classes(const TrainConfig& config, std::ostream& log);
ExitCode run_baseline(const BaselineConfig& config, std::ostream& log);
ExitCode run_demo_library(const std::filesystem::path& output, std::ostream& log);

/// Runs `body`, mapping landchange exceptions to exit codes and printing
/// their message to `err`.
ExitCode guarded(const std::function<ExitCode()>& body, std::ostream& err);

/// Published overall accuracy of the change-point method by minimum
/// missing fraction (20, 30, 40, 50 percent).
inline constexpr double kPublishedAccuracy[4][2] = {{0.2, 0.920}, {0.3, 0.916}, {0.4, 0.913}, {0.5, 0.909}};

/// A change map CSV as written by run_fit or run_baseline.
struct ChangeMap {
  std::vector<std::pair<std::string, ChangeConfig>> entries;  // file order
  std::map<std::string, std::string> header;                  // "# key: value" lines

  ConfigMap as_map() const;
};

ChangeMap read_change_map(const std::filesystem::path& path);

}  // namespace landchange
