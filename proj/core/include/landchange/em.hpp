#pragma once

// Block ECM for MAP change-point inference. Each outer iteration
//   1. recomputes class posteriors Pr(W_v = k | Y_v) from the current alpha
//      and change configurations,
//   2. updates alpha from the posteriors of pixels currently flagged changed,
//   3. re-segments every pixel by scanning all change configurations,
// and stops when the per-pixel change in Q falls below epsilon.

#include "landchange/gaussian.hpp"
#include "landchange/model.hpp"

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace landchange {

struct PixelSeries {
  std::string id;
  std::vector<SpectroTemporalSample> years;

  int year_count() const { return static_cast<int>(years.size()); }
};

/// Effective Gaussians for the background (slot 0) and each change class
/// (slots 1..|C|, library order), factorized once per fit.
struct PreparedLibrary {
  std::vector<PreparedGaussian> slots;
  std::vector<int> class_ids;
  int bands = 0;
  int times = 0;

  const PreparedGaussian& background() const { return slots.front(); }
  const PreparedGaussian& change_class(std::size_t k) const { return slots[k + 1]; }
  std::size_t class_count() const { return class_ids.size(); }
};

PreparedLibrary prepare_library(const ClassLibrary& library, const Hyperparams& h,
                                FactorOptions options = {});

/// Per-pixel sufficient statistics. s_table is J x (|C|+1) with column 0
/// the background; year_loglik(i, k) = log Pr(Y_iv | W_v = k) and loglik is
/// its column sum.
struct PixelCache {
  Matrix s_table;
  Vector loglik;
  Matrix year_loglik;

  int year_count() const { return static_cast<int>(s_table.rows()); }
  std::size_t class_count() const { return static_cast<std::size_t>(loglik.size()); }
};

PixelCache build_cache(const PixelSeries& pixel, const PreparedLibrary& prepared);

/// Pr(W_v = k | Y_v) proportional to alpha_k exp(loglik_k).
Vector class_posterior(const PixelCache& cache, const Vector& alpha);

/// Same, with the likelihood restricted to the change years of `rho`.
/// Falls back to the full series when rho is no change.
Vector class_posterior(const PixelCache& cache, const Vector& alpha, const ChangeConfig& rho);

enum class PosteriorMode {
  ChangeSegment,  // condition on the change years of the current rho
  FullSeries,     // condition on every year
};

/// alpha_k = (sum_v p_vk + pi_k - 1) / (N + sum pi - |C|) over changed
/// pixels; prior proportions when that is 0/0.
Vector update_alpha(std::span<const Vector> changed_posteriors, std::span<const double> dirichlet);

struct RhoOptions {
  double log_alpha_floor = -700.0;
};

/// Change-point objective (to minimize) for one configuration, evaluated
/// directly from the cache.
double rho_objective(const PixelCache& cache, const ChangeConfig& rho, const Vector& posterior,
                     const Vector& alpha, const Hyperparams& h, RhoOptions options = {});

/// Objective for every configuration, in enumerate_configs order, computed
/// by a running scan that adds one year to the change segment at a time.
std::vector<double> scan_objectives(const PixelCache& cache, const Vector& posterior,
                                    const Vector& alpha, const Hyperparams& h,
                                    RhoOptions options = {});

/// argmin of the objective; ties go to the earliest configuration in
/// enumeration order (no change first).
ChangeConfig update_rho(const PixelCache& cache, const Vector& posterior, const Vector& alpha,
                        const Hyperparams& h, RhoOptions options = {});

/// log Dirichlet(alpha; pi) including its normalizing constant.
double log_dirichlet(const Vector& alpha, std::span<const double> dirichlet,
                     double log_alpha_floor = -700.0);

/// Q(Theta, Theta_prev) = sum_v -objective_v(rho_v) / 2 + log Pr(alpha),
/// up to the constant -(BT J / 2) log(2 pi) per pixel, which is omitted.
double compute_q(std::span<const PixelCache> caches, std::span<const Vector> posteriors,
                 std::span<const ChangeConfig> rhos, const Vector& alpha, const Hyperparams& h,
                 RhoOptions options = {});

struct EmOptions {
  int threads = 1;
  int max_iterations = 200;
  /// Compare |delta Q| to epsilon directly instead of |delta Q| / N.
  bool raw_delta_q = false;
  /// Additionally require max |delta alpha| <= this to stop.
  double alpha_tolerance = std::numeric_limits<double>::infinity();
  double log_alpha_floor = -700.0;
  /// Fill PixelFit::imputed.
  bool impute = true;
  PosteriorMode posterior = PosteriorMode::ChangeSegment;
  FactorOptions factor;
};

struct PixelFit {
  std::string id;
  ChangeConfig rho;
  Vector posterior;  // over change classes, library order
  double nochange_probability = 0.0;
  int modal_class = 0;
  std::vector<SpectroTemporalSample> imputed;
};

struct FitResult {
  std::vector<PixelFit> pixels;
  std::vector<int> class_ids;
  Vector alpha;
  /// Q(Theta^(t+1), Theta^(t)) per iteration.
  std::vector<double> q_trace;
  /// Q(Theta^(t+1), Theta^(t)) - Q(Theta^(t), Theta^(t)) per iteration: the
  /// gain of the conditional maximization steps with posteriors held fixed.
  std::vector<double> q_ascent;
  int iterations = 0;
  bool converged = false;
  int years = 0;
  /// Set when the fit ran on PCA-compressed data.
  std::optional<SpectralBasis> compression;
};

/// Runs the block ECM over a region. Results do not depend on the thread
/// count: per-pixel work is independent and reductions run in pixel order.
FitResult fit_region(std::span<const PixelSeries> region, const ClassLibrary& library,
                     const Hyperparams& h, const EmOptions& options = {});

/// Conditional-mean imputation of every year: background Gaussian for
/// years in BG(rho), the modal change class otherwise.
std::vector<SpectroTemporalSample> impute_pixel(const PixelSeries& pixel, const PixelFit& fit,
                                                const ClassLibrary& library, const Hyperparams& h);

}  // namespace landchange
