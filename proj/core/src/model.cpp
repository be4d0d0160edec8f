#include "landchange/model.hpp"

#include "landchange/error.hpp"

#include <cmath>
#include <set>
#include <string>

namespace landchange {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix as_matrix(const Vector& flat, int bands, int times) {
  return Eigen::Map<const RowMajorMatrix>(flat.data(), bands, times);
}

Vector as_flat(const Matrix& m) {
  const RowMajorMatrix rm = m;
  return Eigen::Map<const Vector>(rm.data(), rm.size());
}

void require_spd(const Matrix& m, const std::string& what) {
  if (!is_spd(m)) throw ValidationError(what + " is not symmetric positive definite");
}

double relative_change(const Matrix& next, const Matrix& prev) {
  const double denom = prev.norm();
  return denom > 0.0 ? (next - prev).norm() / denom : (next - prev).norm();
}

Matrix spd_inverse(const Matrix& m, const std::string& what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success || !m.allFinite()) {
    throw DegeneracyError(what + " is degenerate (not positive definite)");
  }
  return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

}  // namespace

std::size_t ClassLibrary::index_of(int class_id) const {
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].id == class_id) return i;
  }
  throw ValidationError("unknown change class id " + std::to_string(class_id));
}

std::vector<int> ClassLibrary::class_ids() const {
  std::vector<int> ids;
  ids.reserve(classes.size());
  for (const auto& c : classes) ids.push_back(c.id);
  return ids;
}

void ClassLibrary::validate() const {
  if (bands <= 0 || times <= 0) throw ValidationError("library dimensions must be positive");
  const Eigen::Index bt = static_cast<Eigen::Index>(bands) * times;
  if (spectral.rows() != bands || spectral.cols() != bands) {
    throw ValidationError("spectral covariance must be bands x bands");
  }
  require_spd(spectral, "spectral covariance");

  if (background.mean.size() != bt) throw ValidationError("background mean must have length bands*times");
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DenseCovariance>) {
          if (c.matrix.rows() != bt || c.matrix.cols() != bt) {
            throw ValidationError("dense background covariance must be BT x BT");
          }
          require_spd(c.matrix, "background covariance");
        } else {
          if (c.spectral.rows() != bands || c.temporal.rows() != times) {
            throw ValidationError("background Kronecker factors have the wrong shape");
          }
          require_spd(c.spectral, "background spectral factor");
          require_spd(c.temporal, "background temporal factor");
        }
      },
      background.covariance);

  std::set<int> ids;
  for (const auto& c : classes) {
    if (!ids.insert(c.id).second) throw ValidationError("duplicate class id " + std::to_string(c.id));
    if (c.id == background.id) {
      throw ValidationError("background id " + std::to_string(c.id) + " is also a change class");
    }
    if (c.mean.size() != bt) {
      throw ValidationError("class " + std::to_string(c.id) + " mean must have length bands*times");
    }
    if (!c.mean.allFinite()) throw ValidationError("class " + std::to_string(c.id) + " mean is not finite");
    if (c.temporal.rows() != times || c.temporal.cols() != times) {
      throw ValidationError("class " + std::to_string(c.id) + " temporal covariance must be T x T");
    }
    require_spd(c.temporal, "temporal covariance of class " + std::to_string(c.id));
  }
}

ClassLibrary compress_library(const ClassLibrary& library, const SpectralBasis& basis) {
  library.validate();
  if (basis.eigenvectors.rows() != library.bands) {
    throw ValidationError("spectral basis does not match library band count");
  }
  const Matrix a = basis.projection();
  const int k = basis.rank;
  const int t = library.times;
  auto project_mean = [&](const Vector& mean) {
    return as_flat(a * as_matrix(mean, library.bands, t));
  };
  auto project_spectral = [&](const Matrix& s) -> Matrix {
    Matrix out = a * s * a.transpose();
    return 0.5 * (out + out.transpose());
  };

  ClassLibrary out;
  out.bands = k;
  out.times = t;
  out.spectral = project_spectral(library.spectral);
  out.background.id = library.background.id;
  out.background.label = library.background.label;
  out.background.mean = project_mean(library.background.mean);
  out.background.covariance = std::visit(
      [&](const auto& c) -> Covariance {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DenseCovariance>) {
          const Matrix lift = densify_kronecker(a, Matrix::Identity(t, t));
          Matrix m = lift * c.matrix * lift.transpose();
          return DenseCovariance{0.5 * (m + m.transpose())};
        } else {
          return KroneckerCovariance{project_spectral(c.spectral), c.temporal};
        }
      },
      library.background.covariance);
  for (const auto& c : library.classes) {
    out.classes.push_back({c.id, c.label, project_mean(c.mean), c.temporal});
  }
  return out;
}

std::vector<double> Hyperparams::dirichlet_weights(std::size_t n_classes) const {
  if (dirichlet.empty()) {
    return std::vector<double>(n_classes, 1.0 + 1.0 / static_cast<double>(n_classes));
  }
  if (dirichlet.size() != n_classes) {
    throw ValidationError("expected " + std::to_string(n_classes) + " Dirichlet weights, got " +
                          std::to_string(dirichlet.size()));
  }
  return dirichlet;
}

void Hyperparams::validate(std::size_t n_classes) const {
  if (!(pi0 > 0.0 && pi0 < 1.0)) throw ValidationError("pi0 must lie in (0, 1)");
  if (!(piR > 0.0 && piR < 1.0)) throw ValidationError("piR must lie in (0, 1)");
  if (!(kappa0 >= 0.0) || !std::isfinite(kappa0)) throw ValidationError("kappa0 must be finite and >= 0");
  if (!(kappac >= 0.0) || !std::isfinite(kappac)) throw ValidationError("kappac must be finite and >= 0");
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  if (compression_rank && *compression_rank < 1) throw ValidationError("compression rank must be >= 1");
  for (const double w : dirichlet_weights(n_classes)) {
    if (!(w >= 1.0) || !std::isfinite(w)) throw ValidationError("Dirichlet weights must be finite and >= 1");
  }
}

std::size_t config_count(int years) {
  if (years < 2) throw ValidationError("at least two years are required");
  const auto m = static_cast<std::size_t>(years - 1);
  return 1 + m + m * (m - 1) / 2;
}

std::vector<ChangeConfig> enumerate_configs(int years) {
  std::vector<ChangeConfig> out;
  out.reserve(config_count(years));
  out.push_back(ChangeConfig::no_change(years));
  for (int r = 1; r < years; ++r) out.push_back({r, years});
  for (int r1 = 1; r1 < years; ++r1) {
    for (int r2 = r1 + 1; r2 < years; ++r2) out.push_back({r1, r2});
  }
  return out;
}

double config_log_prior(const ChangeConfig& rho, const Hyperparams& h, int years) {
  if (!rho.valid(years)) {
    throw ValidationError("invalid change configuration (" + std::to_string(rho.rho1) + ", " +
                          std::to_string(rho.rho2) + ") for J=" + std::to_string(years));
  }
  if (!rho.is_change(years)) return std::log1p(-h.pi0);
  const double m = years - 1;
  if (years < 3) return std::log(h.pi0) - std::log(m);
  if (!rho.recovers(years)) return std::log(h.pi0) + std::log1p(-h.piR) - std::log(m);
  return std::log(h.pi0) + std::log(h.piR) - std::log(m * (m - 1) / 2);
}

GaussianSpec effective_cov(const ClassLibrary& library, int class_id, const Hyperparams& h) {
  if (class_id == library.background.id) {
    return {library.background.mean, library.background.covariance, h.kappa0};
  }
  const auto& c = library.classes[library.index_of(class_id)];
  return {c.mean, KroneckerCovariance{library.spectral, c.temporal}, h.kappac};
}

ClassLibrary estimate_class_params(const TrainingSet& training, const FlipFlopOptions& options) {
  if (!training.samples.contains(training.background_id)) {
    throw ValidationError("training set has no samples for the background class");
  }
  int bands = 0;
  int times = 0;
  for (const auto& [id, samples] : training.samples) {
    if (samples.size() < 2) {
      throw ValidationError("class " + std::to_string(id) + " needs at least 2 training samples");
    }
    for (const auto& s : samples) {
      s.validate();
      if (!s.fully_observed()) throw ValidationError("training samples must be fully observed");
      if (bands == 0) {
        bands = s.bands;
        times = s.times;
      } else if (s.bands != bands || s.times != times) {
        throw ValidationError("training samples have inconsistent dimensions");
      }
    }
  }

  struct Group {
    int id;
    Vector mean;
    std::vector<Matrix> residuals;
    Matrix temporal;
  };
  std::vector<Group> groups;
  std::size_t total = 0;
  for (const auto& [id, samples] : training.samples) {
    Group g{id, Vector::Zero(static_cast<Eigen::Index>(bands) * times), {}, Matrix::Identity(times, times)};
    for (const auto& s : samples) g.mean += s.values;
    g.mean /= static_cast<double>(samples.size());
    for (const auto& s : samples) g.residuals.push_back(as_matrix(s.values - g.mean, bands, times));
    total += samples.size();
    groups.push_back(std::move(g));
  }

  Matrix spectral = Matrix::Identity(bands, bands);
  if (options.fixed_spectral) {
    spectral = *options.fixed_spectral;
    if (spectral.rows() != bands || spectral.cols() != bands) {
      throw ValidationError("fixed spectral factor has the wrong shape");
    }
    require_spd(spectral, "fixed spectral factor");
    spectral *= bands / spectral.trace();
  }

  bool converged = false;
  for (int iter = 0; iter < options.max_iterations && !converged; ++iter) {
    double change = 0.0;
    const Matrix spectral_inv = spd_inverse(spectral, "spectral covariance");
    for (auto& g : groups) {
      Matrix next = Matrix::Zero(times, times);
      for (const auto& r : g.residuals) next.noalias() += r.transpose() * spectral_inv * r;
      next /= static_cast<double>(g.residuals.size()) * bands;
      next = 0.5 * (next + next.transpose()).eval();
      spd_inverse(next, "temporal covariance of class " + std::to_string(g.id));
      change = std::max(change, relative_change(next, g.temporal));
      g.temporal = std::move(next);
    }
    if (!options.fixed_spectral) {
      Matrix next = Matrix::Zero(bands, bands);
      for (const auto& g : groups) {
        const Matrix temporal_inv = spd_inverse(g.temporal, "temporal covariance of class " + std::to_string(g.id));
        for (const auto& r : g.residuals) next.noalias() += r * temporal_inv * r.transpose();
      }
      next /= static_cast<double>(total) * times;
      next = 0.5 * (next + next.transpose()).eval();
      spd_inverse(next, "spectral covariance");
      const double c = bands / next.trace();
      next *= c;
      for (auto& g : groups) g.temporal /= c;
      change = std::max(change, relative_change(next, spectral));
      spectral = std::move(next);
    }
    converged = iter > 0 && change < options.tolerance;
  }
  if (!converged) throw ConvergenceError("flip-flop covariance estimation did not converge");

  auto label_for = [&](int id) {
    const auto it = training.labels.find(id);
    return it != training.labels.end() ? it->second : "class " + std::to_string(id);
  };

  ClassLibrary lib;
  lib.bands = bands;
  lib.times = times;
  lib.spectral = spectral;
  for (auto& g : groups) {
    if (g.id == training.background_id) {
      lib.background = {g.id, label_for(g.id), g.mean, KroneckerCovariance{spectral, g.temporal}};
    } else {
      lib.classes.push_back({g.id, label_for(g.id), g.mean, g.temporal});
    }
  }
  lib.validate();
  return lib;
}

}  // namespace landchange
