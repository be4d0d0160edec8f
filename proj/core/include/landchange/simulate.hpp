#pragma once

#include "landchange/em.hpp"
#include "landchange/model.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace landchange {

/// Seedable generator whose output stream is identical on every platform:
/// std::mt19937_64 words, Lemire bounded integers, Box-Muller normals.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64+lemire+box-muller/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// splitmix64-based derivation of independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Draws from the configuration prior family: no change with probability
/// 1 - pi0; otherwise recovery with probability piR; uniform in stratum.
ChangeConfig random_config(int years, Rng& rng, double pi0, double piR);

enum class MissingPattern {
  Uniform,       // cells masked uniformly at random
  YearEndRuns,   // all-band runs reaching to the end of a year
};

/// Labeled pixel-years to resample from, one year at a time.
struct ExemplarPool {
  std::vector<SpectroTemporalSample> background;
  std::vector<SpectroTemporalSample> change;
};

struct SimSpec {
  int years = 11;
  int n_change = 60;
  int n_nochange = 60;
  int replications = 100;
  double min_missing_fraction = 0.0;
  std::uint64_t seed = 20140101;
  /// Recovery probability for change pixels.
  double recovery_probability = 0.3;
  MissingPattern missing_pattern = MissingPattern::Uniform;

  /// Generative mode: years drawn from N(mu, Sigma + kappa I).
  std::optional<ClassLibrary> library;
  double kappa0 = 5e4;
  double kappac = 5e4;
  /// Weights over library change classes; empty means uniform.
  std::vector<double> class_weights;

  /// Exemplar mode, used when set.
  std::optional<ExemplarPool> pool;

  void validate() const;
};

struct LabeledPixel {
  PixelSeries series;
  ChangeConfig truth;
  /// Change class in generative mode, -1 otherwise.
  int class_id = -1;
};

using Replication = std::vector<LabeledPixel>;

/// Holds the factorized sampling distributions for a spec.
class PixelSynthesizer {
 public:
  explicit PixelSynthesizer(const SimSpec& spec);

  LabeledPixel operator()(const ChangeConfig& truth, Rng& rng, std::string id = {}) const;

 private:
  struct Sampler {
    Vector mean;
    Matrix lower;  // Cholesky factor
  };
  SpectroTemporalSample draw(const Sampler& s, Rng& rng) const;
  SpectroTemporalSample pick(const std::vector<SpectroTemporalSample>& pool, Rng& rng) const;
  std::size_t pick_class(Rng& rng) const;

  const SimSpec* spec_;
  int bands_ = 0;
  int times_ = 0;
  std::optional<Sampler> background_;
  std::vector<Sampler> classes_;
  std::vector<int> class_ids_;
  std::vector<double> cumulative_weights_;
};

LabeledPixel synthesize_pixel(const SimSpec& spec, const ChangeConfig& truth, Rng& rng);

/// Masks cells until at least ceil(fraction * cells) are missing, always
/// leaving one observed cell.
void apply_missingness(PixelSeries& pixel, double fraction, MissingPattern pattern, Rng& rng);

/// Replication r draws from Rng(derive_seed(seed, r)): n_nochange no-change
/// pixels followed by n_change change pixels.
Replication make_replication(const SimSpec& spec, int replication);
std::vector<Replication> make_batch(const SimSpec& spec);

/// A small deterministic library with one forest-like background and
/// two change classes whose means depart from it in different bands.
/// Temporal covariances are AR(1) with unit-variance-per-band scale `sd`.
ClassLibrary synthetic_library(int bands = 7, int times = 19, double sd = 500.0);

}  // namespace landchange
