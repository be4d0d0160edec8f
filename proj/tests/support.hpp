#pragma once

// Shared helpers for the test binaries: random inputs and direct-formula
// oracles that do not go through the library's factorization paths.

#include "landchange/em.hpp"
#include "landchange/gaussian.hpp"
#include "landchange/model.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

namespace landchange::testing {

inline Matrix random_spd(int n, std::mt19937_64& gen, double floor = 0.5) {
  std::normal_distribution<double> z;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = z(gen);
  }
  Matrix m = a * a.transpose() / n;
  m.diagonal().array() += floor;
  return 0.5 * (m + m.transpose());
}

inline Vector random_vector(int n, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> z(0.0, sd);
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = z(gen);
  return v;
}

/// Kronecker product by explicit entry formula.
inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      for (Eigen::Index k = 0; k < b.rows(); ++k) {
        for (Eigen::Index l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
      }
    }
  }
  return out;
}

inline std::vector<int> indices_where(const Mask& m, bool value) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (m[i] == value) out.push_back(static_cast<int>(i));
  }
  return out;
}

inline Matrix sub(const Matrix& m, const std::vector<int>& r, const std::vector<int>& c) {
  Matrix out(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) out(i, j) = m(r[i], c[j]);
  }
  return out;
}

inline Vector sub(const Vector& v, const std::vector<int>& r) {
  Vector out(static_cast<Eigen::Index>(r.size()));
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = v[r[i]];
  return out;
}

struct DirectMoments {
  Vector imputed;
  Matrix cond_var;
};

/// mu_m + S_mo S_oo^-1 (x_o - mu_o) and S_mm - S_mo S_oo^-1 S_om, using an
/// LU-based explicit inverse.
inline DirectMoments direct_moments(const SpectroTemporalSample& s, const Vector& mu, const Matrix& sigma) {
  const auto obs = indices_where(s.missing, false);
  const auto mis = indices_where(s.missing, true);
  DirectMoments out{s.values, Matrix::Zero(sigma.rows(), sigma.cols())};
  if (mis.empty()) return out;
  Vector cm = sub(mu, mis);
  Matrix cv = sub(sigma, mis, mis);
  if (!obs.empty()) {
    const Matrix inv = sub(sigma, obs, obs).fullPivLu().inverse();
    const Matrix gain = sub(sigma, mis, obs) * inv;
    cm += gain * (sub(s.values, obs) - sub(mu, obs));
    cv -= gain * sub(sigma, obs, mis);
  }
  for (std::size_t i = 0; i < mis.size(); ++i) {
    out.imputed[mis[i]] = cm[static_cast<Eigen::Index>(i)];
    for (std::size_t j = 0; j < mis.size(); ++j) out.cond_var(mis[i], mis[j]) = cv(i, j);
  }
  return out;
}

/// log|S| + d' S^-1 d + tr(S^-1 V) with the moments above.
inline double direct_s(const SpectroTemporalSample& s, const Vector& mu, const Matrix& sigma) {
  const auto m = direct_moments(s, mu, sigma);
  const Matrix inv = sigma.fullPivLu().inverse();
  const Vector d = m.imputed - mu;
  return std::log(sigma.determinant()) + d.dot(inv * d) + (inv * m.cond_var).trace();
}

inline double direct_loglik(const SpectroTemporalSample& s, const Vector& mu, const Matrix& sigma) {
  const auto obs = indices_where(s.missing, false);
  if (obs.empty()) return 0.0;
  const Matrix soo = sub(sigma, obs, obs);
  const Vector d = sub(s.values, obs) - sub(mu, obs);
  const double n = static_cast<double>(obs.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + std::log(soo.determinant()) +
                 d.dot(soo.fullPivLu().solve(d)));
}

/// Sample with the given cells masked.
inline SpectroTemporalSample with_missing(int bands, int times, Vector values, const std::vector<int>& missing) {
  auto s = SpectroTemporalSample::observed(bands, times, std::move(values));
  for (const int i : missing) {
    s.missing[i] = true;
    s.values[i] = std::nan("");
  }
  return s;
}

/// Random mask with at least one observed cell kept in a random position
/// when `keep_one` is set.
inline SpectroTemporalSample random_mask(int bands, int times, Vector values, double p, std::mt19937_64& gen,
                                         bool keep_one = false) {
  std::bernoulli_distribution coin(p);
  std::vector<int> miss;
  const int n = bands * times;
  const int keep = keep_one ? static_cast<int>(gen() % static_cast<std::uint64_t>(n)) : -1;
  for (int i = 0; i < n; ++i) {
    if (i != keep && coin(gen)) miss.push_back(i);
  }
  return with_missing(bands, times, std::move(values), miss);
}

/// A small library with random SPD factors and separated means.
inline ClassLibrary random_library(int bands, int times, int n_classes, std::mt19937_64& gen, double shift = 3.0) {
  ClassLibrary lib;
  lib.bands = bands;
  lib.times = times;
  lib.spectral = random_spd(bands, gen);
  const int bt = bands * times;
  lib.background = {0, "background", random_vector(bt, gen), KroneckerCovariance{lib.spectral, random_spd(times, gen)}};
  for (int k = 0; k < n_classes; ++k) {
    Vector mean = lib.background.mean + random_vector(bt, gen, shift);
    lib.classes.push_back({k + 1, "class" + std::to_string(k + 1), mean, random_spd(times, gen)});
  }
  return lib;
}

/// Dense effective covariance for a slot (0 = background), built by hand.
inline Matrix effective_dense(const ClassLibrary& lib, std::size_t slot, const Hyperparams& h) {
  Matrix m;
  double kappa = 0.0;
  if (slot == 0) {
    if (const auto* d = std::get_if<DenseCovariance>(&lib.background.covariance)) {
      m = d->matrix;
    } else {
      const auto& k = std::get<KroneckerCovariance>(lib.background.covariance);
      m = kron(k.spectral, k.temporal);
    }
    kappa = h.kappa0;
  } else {
    m = kron(lib.spectral, lib.classes[slot - 1].temporal);
    kappa = h.kappac;
  }
  m.diagonal().array() += kappa;
  return m;
}

inline Vector slot_mean(const ClassLibrary& lib, std::size_t slot) {
  return slot == 0 ? lib.background.mean : lib.classes[slot - 1].mean;
}

/// Objective of one configuration from first principles:
/// sum of S over background years under the background, posterior-weighted
/// S minus 2 log alpha over change years, minus twice the log prior.
inline double brute_objective(const PixelSeries& px, const ClassLibrary& lib, const Hyperparams& h,
                              const ChangeConfig& rho, const Vector& post, const Vector& alpha) {
  const int years = px.year_count();
  double obj = 0.0;
  for (int i = 1; i <= years; ++i) {
    const auto& s = px.years[static_cast<std::size_t>(i - 1)];
    if (rho.in_background(i)) {
      obj += direct_s(s, slot_mean(lib, 0), effective_dense(lib, 0, h));
    } else {
      for (std::size_t g = 0; g < lib.size(); ++g) {
        obj += post[static_cast<Eigen::Index>(g)] * direct_s(s, slot_mean(lib, g + 1), effective_dense(lib, g + 1, h));
      }
    }
  }
  if (rho.is_change(years)) {
    for (Eigen::Index g = 0; g < alpha.size(); ++g) obj -= 2.0 * post[g] * std::log(alpha[g]);
  }
  double prior = 0.0;
  const double m = years - 1;
  if (!rho.is_change(years)) {
    prior = std::log(1.0 - h.pi0);
  } else if (years < 3) {
    prior = std::log(h.pi0 / m);
  } else if (rho.rho2 == years) {
    prior = std::log(h.pi0 * (1.0 - h.piR) / m);
  } else {
    prior = std::log(h.pi0 * h.piR / (m * (m - 1) / 2));
  }
  return obj - 2.0 * prior;
}

// A small region drawn from a library: each pixel gets a random config and
// class, years drawn from the effective Gaussians, cells masked at rate p.
inline std::vector<PixelSeries> draw_region(const ClassLibrary& lib, const Hyperparams& h, int n, int years, double p,
                                     std::mt19937_64& gen, std::vector<ChangeConfig>* truths = nullptr) {
  const auto configs = enumerate_configs(years);
  std::vector<Matrix> chol;
  for (std::size_t slot = 0; slot <= lib.size(); ++slot) chol.push_back(Eigen::LLT<Matrix>(effective_dense(lib, slot, h)).matrixL());
  std::vector<PixelSeries> out;
  const int bt = lib.bands * lib.times;
  for (int v = 0; v < n; ++v) {
    const auto rho = configs[gen() % configs.size()];
    const std::size_t cls = 1 + gen() % lib.size();
    PixelSeries px;
    px.id = "p" + std::to_string(v);
    for (int i = 1; i <= years; ++i) {
      const std::size_t slot = rho.in_background(i) ? 0 : cls;
      const Vector x = slot_mean(lib, slot) + chol[slot] * random_vector(bt, gen);
      px.years.push_back(random_mask(lib.bands, lib.times, x, p, gen, true));
    }
    out.push_back(std::move(px));
    if (truths) truths->push_back(rho);
  }
  return out;
}

}  // namespace landchange::testing
