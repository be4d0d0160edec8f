#pragma once

#include "landchange/gaussian.hpp"

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace landchange {

/// A land-cover class a pixel may convert to. The spectral covariance is
/// shared library-wide, so a class carries only its temporal factor.
struct ChangeClass {
  int id = 0;
  std::string label;
  Vector mean;      // length B*T, band-major
  Matrix temporal;  // T x T
};

/// The predominant pre/post-change cover. Its covariance may be a Kronecker
/// pair or a dense BT x BT matrix.
struct BackgroundClass {
  int id = 0;
  std::string label;
  Vector mean;
  Covariance covariance;
};

struct ClassLibrary {
  int bands = 0;
  int times = 0;
  Matrix spectral;  // B x B, shared across classes
  BackgroundClass background;
  std::vector<ChangeClass> classes;

  std::size_t size() const { return classes.size(); }
  /// Position of a change class id in `classes`; throws ValidationError.
  std::size_t index_of(int class_id) const;
  std::vector<int> class_ids() const;
  void validate() const;
};

/// Projects means and covariances of a library through a spectral basis.
/// The compressed spectral factor is Diag(lambda)^-1 (or I when whitening).
ClassLibrary compress_library(const ClassLibrary& library, const SpectralBasis& basis);

struct Hyperparams {
  double pi0 = 1e-10;    // probability of a change
  double piR = 0.01;     // probability of recovery given a change
  double kappa0 = 5e4;   // background variance scale
  double kappac = 5e4;   // change-class variance scale
  /// Dirichlet weights, one per change class in library order. Empty means
  /// 1 + 1/|C| for every class.
  std::vector<double> dirichlet;
  double epsilon = 1e-6;
  std::optional<int> compression_rank;
  PcaScaling compression_scaling = PcaScaling::Inverse;

  std::vector<double> dirichlet_weights(std::size_t n_classes) const;
  void validate(std::size_t n_classes) const;
};

/// rho = (rho1, rho2) with years rho1+1 .. rho2 in the change state.
/// (J, J) is no change. Years are 1-based.
struct ChangeConfig {
  int rho1 = 0;
  int rho2 = 0;

  bool is_change(int years) const { return rho1 < years; }
  bool recovers(int years) const { return rho1 < rho2 && rho2 < years; }
  bool in_background(int year) const { return year <= rho1 || year > rho2; }
  bool valid(int years) const {
    return 1 <= rho1 && rho1 <= rho2 && rho2 <= years && (rho1 < rho2 || rho1 == years);
  }
  static ChangeConfig no_change(int years) { return {years, years}; }

  friend auto operator<=>(const ChangeConfig&, const ChangeConfig&) = default;
};

/// No change first, then one-change configs (r, J) ascending, then
/// two-change configs (r1, r2) with r2 < J in lexicographic order.
std::vector<ChangeConfig> enumerate_configs(int years);

/// 1 + (J-1) + C(J-1, 2).
std::size_t config_count(int years);

/// Log prior probability of a configuration. For J = 2 there is no
/// recovery stratum and the whole change mass goes to one-change configs.
double config_log_prior(const ChangeConfig& rho, const Hyperparams& h, int years);

/// Background: (mu_F, Sigma_F + kappa0 I). Change class g:
/// (mu_g, Sigma_s (x) Sigma_tg + kappac I).
GaussianSpec effective_cov(const ClassLibrary& library, int class_id, const Hyperparams& h);

struct TrainingSet {
  int background_id = 0;
  std::map<int, std::vector<SpectroTemporalSample>> samples;
  std::map<int, std::string> labels;
};

struct FlipFlopOptions {
  double tolerance = 1e-6;
  int max_iterations = 1000;
  /// Hold the spectral factor fixed (normalized to trace B) instead of
  /// estimating it.
  std::optional<Matrix> fixed_spectral;
};

/// Complete-data estimator: per-class sample means, and a Kronecker
/// covariance per class with a spectral factor pooled over all classes
/// (background included), fitted by alternating maximum-likelihood updates.
/// The scale is fixed by trace(Sigma_s) = B.
ClassLibrary estimate_class_params(const TrainingSet& training, const FlipFlopOptions& options = {});

}  // namespace landchange
