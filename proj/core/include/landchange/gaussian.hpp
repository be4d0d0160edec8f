#pragma once

// Missing-data multivariate Gaussian machinery for spectro-temporal samples.
//
// A sample is one pixel-year: B spectral bands observed at T within-year
// times. Cells are flattened band-major, so flat index = band * T + time and
// a covariance Sigma_s (x) Sigma_t (Kronecker, spectral factor first) indexes
// the flattened vector directly.

#include <Eigen/Dense>

#include <variant>
#include <vector>

namespace landchange {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline Eigen::Index flat_index(int band, int time, int times) {
  return static_cast<Eigen::Index>(band) * times + time;
}

struct SpectroTemporalSample {
  int bands = 0;
  int times = 0;
  /// Length bands*times, band-major. Values at missing cells are NaN.
  Vector values;
  /// true = missing.
  Mask missing;

  static SpectroTemporalSample observed(int bands, int times, Vector values);

  Eigen::Index size() const { return values.size(); }
  Eigen::Index missing_count() const { return missing.count(); }
  bool fully_observed() const { return missing_count() == 0; }
  bool fully_missing() const { return missing_count() == size(); }
  double at(int band, int time) const { return values[flat_index(band, time, times)]; }

  /// Throws ValidationError on shape mismatch or NaN at an observed cell.
  void validate() const;
};

/// Marks a time missing in every band when any band is missing there.
SpectroTemporalSample expand_missing_to_all_bands(const SpectroTemporalSample& sample);

struct DenseCovariance {
  Matrix matrix;
};

struct KroneckerCovariance {
  Matrix spectral;  // B x B
  Matrix temporal;  // T x T
};

using Covariance = std::variant<DenseCovariance, KroneckerCovariance>;

Matrix densify_kronecker(const Matrix& spectral, const Matrix& temporal);

struct GaussianSpec {
  Vector mean;
  Covariance covariance;
  /// Added as ridge * I to the covariance.
  double ridge = 0.0;

  Eigen::Index dimension() const { return mean.size(); }
  /// Dense covariance including the ridge.
  Matrix dense_covariance() const;
  void validate() const;
};

/// Log-density of a fully observed vector. Kronecker specs are evaluated from
/// the eigen-decompositions of the two factors without densifying.
double log_density(const Vector& x, const GaussianSpec& spec);

struct FactorOptions {
  /// When a Cholesky factorization fails, retry once after adding
  /// jitter * mean(diag) to the diagonal.
  double jitter = 1e-8;
};

/// A Gaussian with its dense covariance, precision and log-determinant
/// computed once. Immutable and safe to share across threads.
class PreparedGaussian {
 public:
  explicit PreparedGaussian(const GaussianSpec& spec, FactorOptions options = {});

  Eigen::Index dimension() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& precision() const { return precision_; }
  double log_det() const { return log_det_; }
  const FactorOptions& options() const { return options_; }

 private:
  Vector mean_;
  Matrix covariance_;
  Matrix precision_;
  double log_det_ = 0.0;
  FactorOptions options_;
};

struct ConditionalMoments {
  /// Observed entries copied; missing entries replaced by E[x_miss | x_obs].
  Vector imputed_mean;
  /// Var[x_miss | x_obs] embedded in a full-size matrix, zero elsewhere.
  Matrix cond_var;
};

ConditionalMoments conditional_moments(const SpectroTemporalSample& sample,
                                       const PreparedGaussian& gaussian);
ConditionalMoments conditional_moments(const SpectroTemporalSample& sample,
                                       const GaussianSpec& spec);

/// log|S| + (x~ - mu)' S^-1 (x~ - mu) + sum_{j,k in miss} (S^-1)_jk V_jk,
/// evaluated from the conditional moments.
double s_statistic(const SpectroTemporalSample& sample, const PreparedGaussian& gaussian);
double s_statistic(const SpectroTemporalSample& sample, const GaussianSpec& spec);

/// Log-density of the observed sub-vector under its marginal normal.
/// A fully missing sample returns 0.
double observed_loglik(const SpectroTemporalSample& sample, const PreparedGaussian& gaussian);
double observed_loglik(const SpectroTemporalSample& sample, const GaussianSpec& spec);

/// The S-statistic and the observed log-likelihood from a single
/// factorization of the observed block. Uses the identities
///   S = log|S| + d_o' S_oo^-1 d_o + |miss|,
///   loglik = -(n_o log 2pi + log|S_oo| + d_o' S_oo^-1 d_o) / 2.
struct YearTerms {
  double s_statistic = 0.0;
  double loglik = 0.0;
};
YearTerms year_terms(const SpectroTemporalSample& sample, const PreparedGaussian& gaussian);

enum class PcaScaling {
  Inverse,      // Diag(lambda)^-1, as in the compression formula
  InverseSqrt,  // Diag(lambda)^-1/2, whitening
};

/// Leading eigenvectors of a spectral covariance and the K x B compression
/// operator built from them.
struct SpectralBasis {
  Vector eigenvalues;   // all B, descending
  Matrix eigenvectors;  // B x B, column j pairs with eigenvalues[j]
  int rank = 0;
  PcaScaling scaling = PcaScaling::Inverse;

  /// rank x B matrix: Diag(scale(lambda_1:K)) P_1:K'.
  Matrix projection() const;
};

SpectralBasis spectral_basis(const Matrix& sigma_s, int rank,
                             PcaScaling scaling = PcaScaling::Inverse);

/// Compresses B bands to K rows per time. A time with any missing band is
/// missing in all K compressed rows.
SpectroTemporalSample pca_compress(const SpectroTemporalSample& sample, const SpectralBasis& basis);
SpectroTemporalSample pca_compress(const SpectroTemporalSample& sample, const Matrix& sigma_s,
                                   int rank, PcaScaling scaling = PcaScaling::Inverse);

/// True when the matrix is symmetric (relative tolerance) and its Cholesky
/// factorization succeeds.
bool is_spd(const Matrix& m);

}  // namespace landchange
