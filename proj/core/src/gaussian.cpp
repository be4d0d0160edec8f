#include "landchange/gaussian.hpp"

#include "landchange/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace landchange {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct IndexSplit {
  std::vector<Eigen::Index> observed;
  std::vector<Eigen::Index> missing;
};

IndexSplit split_indices(const Mask& missing) {
  IndexSplit s;
  s.observed.reserve(static_cast<std::size_t>(missing.size()));
  for (Eigen::Index i = 0; i < missing.size(); ++i) {
    (missing[i] ? s.missing : s.observed).push_back(i);
  }
  return s;
}

// Cholesky with a single jittered retry.
Eigen::LLT<Matrix> factor(const Matrix& m, double jitter, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  if (jitter > 0.0 && m.rows() > 0) {
    const double scale = m.diagonal().mean();
    if (std::isfinite(scale) && scale > 0.0) {
      Matrix bumped = m;
      bumped.diagonal().array() += jitter * scale;
      llt.compute(bumped);
      if (llt.info() == Eigen::Success) return llt;
    }
  }
  throw DegeneracyError(std::string(what) + " is not positive definite");
}

double log_det_from(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void check_dimension(const SpectroTemporalSample& sample, Eigen::Index dim) {
  sample.validate();
  if (sample.size() != dim) {
    throw ValidationError("sample has " + std::to_string(sample.size()) +
                          " cells but the Gaussian has dimension " + std::to_string(dim));
  }
}

Vector gather(const Vector& v, const std::vector<Eigen::Index>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

}  // namespace

SpectroTemporalSample SpectroTemporalSample::observed(int bands, int times, Vector values) {
  SpectroTemporalSample s;
  s.bands = bands;
  s.times = times;
  s.missing = Mask::Constant(values.size(), false);
  s.values = std::move(values);
  s.validate();
  return s;
}

void SpectroTemporalSample::validate() const {
  if (bands <= 0 || times <= 0) throw ValidationError("sample dimensions must be positive");
  const Eigen::Index n = static_cast<Eigen::Index>(bands) * times;
  if (values.size() != n || missing.size() != n) {
    throw ValidationError("sample values/mask length does not match bands*times");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!missing[i] && !std::isfinite(values[i])) {
      throw ValidationError("non-finite value at an observed cell");
    }
  }
}

SpectroTemporalSample expand_missing_to_all_bands(const SpectroTemporalSample& sample) {
  SpectroTemporalSample out = sample;
  for (int t = 0; t < sample.times; ++t) {
    bool any = false;
    for (int b = 0; b < sample.bands; ++b) any = any || sample.missing[flat_index(b, t, sample.times)];
    if (!any) continue;
    for (int b = 0; b < sample.bands; ++b) {
      const auto i = flat_index(b, t, sample.times);
      out.missing[i] = true;
      out.values[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

Matrix densify_kronecker(const Matrix& spectral, const Matrix& temporal) {
  if (spectral.rows() != spectral.cols() || temporal.rows() != temporal.cols()) {
    throw ValidationError("Kronecker factors must be square");
  }
  const Eigen::Index b = spectral.rows();
  const Eigen::Index t = temporal.rows();
  Matrix out(b * t, b * t);
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < b; ++j) {
      out.block(i * t, j * t, t, t) = spectral(i, j) * temporal;
    }
  }
  return out;
}

Matrix GaussianSpec::dense_covariance() const {
  Matrix m = std::visit(
      [](const auto& c) -> Matrix {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DenseCovariance>) {
          return c.matrix;
        } else {
          return densify_kronecker(c.spectral, c.temporal);
        }
      },
      covariance);
  if (ridge != 0.0) m.diagonal().array() += ridge;
  return m;
}

void GaussianSpec::validate() const {
  if (ridge < 0.0 || !std::isfinite(ridge)) throw ValidationError("ridge must be finite and >= 0");
  const Eigen::Index dim = std::visit(
      [](const auto& c) -> Eigen::Index {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DenseCovariance>) {
          if (c.matrix.rows() != c.matrix.cols()) throw ValidationError("covariance must be square");
          return c.matrix.rows();
        } else {
          if (c.spectral.rows() != c.spectral.cols() || c.temporal.rows() != c.temporal.cols()) {
            throw ValidationError("Kronecker factors must be square");
          }
          return c.spectral.rows() * c.temporal.rows();
        }
      },
      covariance);
  if (dim != mean.size()) throw ValidationError("mean length does not match covariance dimension");
  if (!mean.allFinite()) throw ValidationError("mean has non-finite entries");
}

double log_density(const Vector& x, const GaussianSpec& spec) {
  spec.validate();
  if (x.size() != spec.dimension()) throw ValidationError("vector length does not match Gaussian dimension");
  const Vector d = x - spec.mean;
  const double n = static_cast<double>(d.size());

  if (const auto* kron = std::get_if<KroneckerCovariance>(&spec.covariance)) {
    // (Us (x) Ut)(Ds (x) Dt + ridge I)(Us (x) Ut)'; with band-major flattening
    // the rotated residual is Us' R Ut where R is the B x T residual matrix.
    Eigen::SelfAdjointEigenSolver<Matrix> es(kron->spectral);
    Eigen::SelfAdjointEigenSolver<Matrix> et(kron->temporal);
    if (es.info() != Eigen::Success || et.info() != Eigen::Success) {
      throw DegeneracyError("eigen-decomposition of a Kronecker factor failed");
    }
    const auto b = kron->spectral.rows();
    const auto t = kron->temporal.rows();
    const Eigen::Map<const RowMajorMatrix> r(d.data(), b, t);
    const Matrix z = es.eigenvectors().transpose() * r * et.eigenvectors();
    double log_det = 0.0;
    double quad = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      for (Eigen::Index j = 0; j < t; ++j) {
        const double lambda = es.eigenvalues()[i] * et.eigenvalues()[j] + spec.ridge;
        if (!(lambda > 0.0)) throw DegeneracyError("Kronecker covariance is not positive definite");
        log_det += std::log(lambda);
        quad += z(i, j) * z(i, j) / lambda;
      }
    }
    return -0.5 * (n * kLog2Pi + log_det + quad);
  }

  const auto llt = factor(spec.dense_covariance(), 0.0, "covariance");
  const Vector w = llt.matrixL().solve(d);
  return -0.5 * (n * kLog2Pi + log_det_from(llt) + w.squaredNorm());
}

PreparedGaussian::PreparedGaussian(const GaussianSpec& spec, FactorOptions options)
    : mean_(spec.mean), covariance_(spec.dense_covariance()), options_(options) {
  spec.validate();
  const auto llt = factor(covariance_, options_.jitter, "covariance");
  log_det_ = log_det_from(llt);
  precision_ = llt.solve(Matrix::Identity(covariance_.rows(), covariance_.cols()));
  precision_ = 0.5 * (precision_ + precision_.transpose()).eval();
}

ConditionalMoments conditional_moments(const SpectroTemporalSample& sample,
                                       const PreparedGaussian& gaussian) {
  check_dimension(sample, gaussian.dimension());
  const auto n = gaussian.dimension();
  ConditionalMoments out{sample.values, Matrix::Zero(n, n)};
  const auto split = split_indices(sample.missing);
  const auto& mu = gaussian.mean();
  const auto& sigma = gaussian.covariance();

  if (split.missing.empty()) return out;
  if (split.observed.empty()) {
    out.imputed_mean = mu;
    out.cond_var = sigma;
    return out;
  }

  const Matrix s_oo = sigma(split.observed, split.observed);
  const Matrix s_om = sigma(split.observed, split.missing);
  const auto llt = factor(s_oo, gaussian.options().jitter, "observed covariance block");
  const Vector d_o = gather(sample.values, split.observed) - gather(mu, split.observed);

  const Matrix w = llt.matrixL().solve(s_om);    // L^-1 S_om
  const Vector wd = llt.matrixL().solve(d_o);    // L^-1 d_o
  const Vector mean_m = gather(mu, split.missing) + w.transpose() * wd;
  Matrix var_m = sigma(split.missing, split.missing);
  var_m.noalias() -= w.transpose() * w;

  for (std::size_t a = 0; a < split.missing.size(); ++a) {
    const auto ia = split.missing[a];
    out.imputed_mean[ia] = mean_m[static_cast<Eigen::Index>(a)];
    for (std::size_t c = 0; c < split.missing.size(); ++c) {
      out.cond_var(ia, split.missing[c]) =
          var_m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

ConditionalMoments conditional_moments(const SpectroTemporalSample& sample,
                                       const GaussianSpec& spec) {
  return conditional_moments(sample, PreparedGaussian(spec));
}

double s_statistic(const SpectroTemporalSample& sample, const PreparedGaussian& gaussian) {
  const auto moments = conditional_moments(sample, gaussian);
  const Vector diff = moments.imputed_mean - gaussian.mean();
  const auto& precision = gaussian.precision();
  const double quad = diff.dot(precision * diff);
  double trace = 0.0;
  const auto split = split_indices(sample.missing);
  for (const auto j : split.missing) {
    for (const auto k : split.missing) trace += precision(j, k) * moments.cond_var(j, k);
  }
  return gaussian.log_det() + quad + trace;
}

double s_statistic(const SpectroTemporalSample& sample, const GaussianSpec& spec) {
  return s_statistic(sample, PreparedGaussian(spec));
}

double observed_loglik(const SpectroTemporalSample& sample, const PreparedGaussian& gaussian) {
  return year_terms(sample, gaussian).loglik;
}

double observed_loglik(const SpectroTemporalSample& sample, const GaussianSpec& spec) {
  return observed_loglik(sample, PreparedGaussian(spec));
}

YearTerms year_terms(const SpectroTemporalSample& sample, const PreparedGaussian& gaussian) {
  check_dimension(sample, gaussian.dimension());
  const auto split = split_indices(sample.missing);
  const double n_miss = static_cast<double>(split.missing.size());
  if (split.observed.empty()) return {gaussian.log_det() + n_miss, 0.0};

  double maha = 0.0;
  double log_det_oo = 0.0;
  if (split.missing.empty()) {
    const Vector d = sample.values - gaussian.mean();
    maha = d.dot(gaussian.precision() * d);
    log_det_oo = gaussian.log_det();
  } else {
    const Matrix s_oo = gaussian.covariance()(split.observed, split.observed);
    const auto llt = factor(s_oo, gaussian.options().jitter, "observed covariance block");
    const Vector d_o = gather(sample.values, split.observed) - gather(gaussian.mean(), split.observed);
    maha = llt.matrixL().solve(d_o).squaredNorm();
    log_det_oo = log_det_from(llt);
  }
  const double n_obs = static_cast<double>(split.observed.size());
  return {gaussian.log_det() + maha + n_miss, -0.5 * (n_obs * kLog2Pi + log_det_oo + maha)};
}

Matrix SpectralBasis::projection() const {
  Matrix p(rank, eigenvectors.rows());
  for (int k = 0; k < rank; ++k) {
    const double lambda = eigenvalues[k];
    const double scale = scaling == PcaScaling::Inverse ? 1.0 / lambda : 1.0 / std::sqrt(lambda);
    p.row(k) = scale * eigenvectors.col(k).transpose();
  }
  return p;
}

SpectralBasis spectral_basis(const Matrix& sigma_s, int rank, PcaScaling scaling) {
  const auto b = sigma_s.rows();
  if (sigma_s.cols() != b || b == 0) throw ValidationError("spectral covariance must be square");
  if (rank < 1 || rank > b) {
    throw ValidationError("compression rank must be in [1, " + std::to_string(b) + "]");
  }
  if (!is_spd(sigma_s)) throw DegeneracyError("spectral covariance is not symmetric positive definite");
  Eigen::SelfAdjointEigenSolver<Matrix> es(sigma_s);
  if (es.info() != Eigen::Success) throw DegeneracyError("eigen-decomposition of spectral covariance failed");

  SpectralBasis basis;
  basis.rank = rank;
  basis.scaling = scaling;
  // Descending order; a stable sort keeps tied eigenvectors in solver order,
  // so an identity covariance yields the identity basis.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(b));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    return es.eigenvalues()[i] > es.eigenvalues()[j];
  });
  basis.eigenvalues.resize(b);
  basis.eigenvectors.resize(b, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    basis.eigenvalues[j] = es.eigenvalues()[order[static_cast<std::size_t>(j)]];
    basis.eigenvectors.col(j) = es.eigenvectors().col(order[static_cast<std::size_t>(j)]);
  }
  // Sign convention: largest-magnitude component of each eigenvector is positive.
  for (Eigen::Index j = 0; j < b; ++j) {
    Eigen::Index arg = 0;
    basis.eigenvectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (basis.eigenvectors(arg, j) < 0.0) basis.eigenvectors.col(j) *= -1.0;
  }
  if (!(basis.eigenvalues[b - 1] > 0.0)) throw DegeneracyError("spectral covariance is singular");
  return basis;
}

SpectroTemporalSample pca_compress(const SpectroTemporalSample& sample, const SpectralBasis& basis) {
  sample.validate();
  if (sample.bands != basis.eigenvectors.rows()) {
    throw ValidationError("sample band count does not match spectral basis");
  }
  const Matrix proj = basis.projection();
  SpectroTemporalSample out;
  out.bands = basis.rank;
  out.times = sample.times;
  out.values = Vector::Constant(static_cast<Eigen::Index>(out.bands) * out.times,
                                std::numeric_limits<double>::quiet_NaN());
  out.missing = Mask::Constant(out.values.size(), true);

  Vector column(sample.bands);
  for (int t = 0; t < sample.times; ++t) {
    bool complete = true;
    for (int b = 0; b < sample.bands; ++b) {
      const auto i = flat_index(b, t, sample.times);
      if (sample.missing[i]) {
        complete = false;
        break;
      }
      column[b] = sample.values[i];
    }
    if (!complete) continue;
    const Vector compressed = proj * column;
    for (int k = 0; k < out.bands; ++k) {
      const auto i = flat_index(k, t, out.times);
      out.values[i] = compressed[k];
      out.missing[i] = false;
    }
  }
  return out;
}

SpectroTemporalSample pca_compress(const SpectroTemporalSample& sample, const Matrix& sigma_s,
                                   int rank, PcaScaling scaling) {
  return pca_compress(sample, spectral_basis(sigma_s, rank, scaling));
}

bool is_spd(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite()) return false;
  const double scale = std::max(m.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace landchange
