#include "landchange/em.hpp"

#include "landchange/error.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace landchange {

namespace {

std::string pixel_label(const std::string& id) { return id.empty() ? "<unnamed>" : id; }

Vector floored_log(const Vector& alpha, double floor) {
  Vector out(alpha.size());
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    out[k] = alpha[k] > 0.0 ? std::max(std::log(alpha[k]), floor) : floor;
  }
  return out;
}

void check_cache_inputs(const PixelCache& cache, const Vector& posterior, const Vector& alpha) {
  const auto n = static_cast<Eigen::Index>(cache.class_count());
  if (posterior.size() != n || alpha.size() != n || cache.s_table.cols() != n + 1) {
    throw ValidationError("posterior/alpha length does not match the number of change classes");
  }
}

std::vector<SpectroTemporalSample> impute_with(const PixelSeries& pixel, const ChangeConfig& rho,
                                               std::size_t modal_index, const PreparedLibrary& prepared) {
  std::vector<SpectroTemporalSample> out;
  out.reserve(pixel.years.size());
  const int years = pixel.year_count();
  for (int i = 1; i <= years; ++i) {
    const auto& sample = pixel.years[static_cast<std::size_t>(i - 1)];
    const auto& g = rho.in_background(i) ? prepared.background() : prepared.change_class(modal_index);
    SpectroTemporalSample filled = sample;
    if (!sample.fully_observed()) filled.values = conditional_moments(sample, g).imputed_mean;
    filled.missing.setConstant(false);
    out.push_back(std::move(filled));
  }
  return out;
}

std::size_t modal_index(const Vector& posterior, const std::vector<int>& class_ids) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < class_ids.size(); ++k) {
    const auto pk = posterior[static_cast<Eigen::Index>(k)];
    const auto pb = posterior[static_cast<Eigen::Index>(best)];
    if (pk > pb || (pk == pb && class_ids[k] < class_ids[best])) best = k;
  }
  return best;
}

double nochange_probability(const std::vector<double>& objectives) {
  // Configurations weighted by exp(-objective / 2); index 0 is no change.
  const double lowest = *std::min_element(objectives.begin(), objectives.end());
  double total = 0.0;
  for (const double o : objectives) total += std::exp(-0.5 * (o - lowest));
  return std::exp(-0.5 * (objectives.front() - lowest)) / total;
}

}  // namespace

PreparedLibrary prepare_library(const ClassLibrary& library, const Hyperparams& h, FactorOptions options) {
  PreparedLibrary out;
  out.bands = library.bands;
  out.times = library.times;
  out.class_ids = library.class_ids();
  out.slots.reserve(library.size() + 1);
  out.slots.emplace_back(effective_cov(library, library.background.id, h), options);
  for (const auto& c : library.classes) out.slots.emplace_back(effective_cov(library, c.id, h), options);
  return out;
}

PixelCache build_cache(const PixelSeries& pixel, const PreparedLibrary& prepared) {
  const int years = pixel.year_count();
  const auto n_classes = static_cast<Eigen::Index>(prepared.class_count());
  PixelCache cache{Matrix(years, n_classes + 1), Vector::Zero(n_classes), Matrix(years, n_classes)};
  for (int i = 0; i < years; ++i) {
    const auto& sample = pixel.years[static_cast<std::size_t>(i)];
    for (Eigen::Index slot = 0; slot <= n_classes; ++slot) {
      YearTerms terms;
      try {
        terms = year_terms(sample, prepared.slots[static_cast<std::size_t>(slot)]);
      } catch (const DegeneracyError& e) {
        throw DegeneracyError("pixel " + pixel_label(pixel.id) + ", year " + std::to_string(i + 1) +
                              ": " + e.what());
      } catch (const ValidationError& e) {
        throw ValidationError("pixel " + pixel_label(pixel.id) + ", year " + std::to_string(i + 1) +
                              ": " + e.what());
      }
      cache.s_table(i, slot) = terms.s_statistic;
      if (slot > 0) {
        cache.year_loglik(i, slot - 1) = terms.loglik;
        cache.loglik[slot - 1] += terms.loglik;
      }
    }
  }
  return cache;
}

namespace {

Vector posterior_from(const Vector& loglik, const Vector& alpha) {
  const auto n = loglik.size();
  if (alpha.size() != n) throw ValidationError("alpha length does not match the number of change classes");
  Vector logw(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    logw[k] = alpha[k] > 0.0 ? std::log(alpha[k]) + loglik[k] : -std::numeric_limits<double>::infinity();
  }
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) throw DegeneracyError("all class posteriors are numerically zero");
  Vector p = (logw.array() - top).exp();
  p /= p.sum();
  return p;
}

}  // namespace

Vector class_posterior(const PixelCache& cache, const Vector& alpha) { return posterior_from(cache.loglik, alpha); }

Vector class_posterior(const PixelCache& cache, const Vector& alpha, const ChangeConfig& rho) {
  const int years = cache.year_count();
  if (!rho.valid(years)) throw ValidationError("invalid change configuration");
  if (!rho.is_change(years)) return posterior_from(cache.loglik, alpha);
  const Vector segment = cache.year_loglik.middleRows(rho.rho1, rho.rho2 - rho.rho1).colwise().sum().transpose();
  return posterior_from(segment, alpha);
}

Vector update_alpha(std::span<const Vector> changed_posteriors, std::span<const double> dirichlet) {
  const auto n = static_cast<Eigen::Index>(dirichlet.size());
  if (n == 0) throw ValidationError("at least one change class is required");
  Vector numer = Vector::Zero(n);
  for (const auto& p : changed_posteriors) {
    if (p.size() != n) throw ValidationError("posterior length does not match Dirichlet weights");
    numer += p;
  }
  double pi_sum = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    numer[k] += dirichlet[static_cast<std::size_t>(k)] - 1.0;
    pi_sum += dirichlet[static_cast<std::size_t>(k)];
  }
  const double denom = static_cast<double>(changed_posteriors.size()) + pi_sum - static_cast<double>(n);
  if (denom == 0.0) {
    Vector prior(n);
    for (Eigen::Index k = 0; k < n; ++k) prior[k] = dirichlet[static_cast<std::size_t>(k)] / pi_sum;
    return prior;
  }
  if ((numer.array() < 0.0).any() || !(denom > 0.0)) {
    throw InvariantError("alpha update has a negative numerator; Dirichlet weights must be >= 1");
  }
  return numer / denom;
}

double rho_objective(const PixelCache& cache, const ChangeConfig& rho, const Vector& posterior,
                     const Vector& alpha, const Hyperparams& h, RhoOptions options) {
  check_cache_inputs(cache, posterior, alpha);
  const int years = cache.year_count();
  const auto n = static_cast<Eigen::Index>(cache.class_count());
  double obj = 0.0;
  for (int i = 1; i <= years; ++i) {
    if (rho.in_background(i)) {
      obj += cache.s_table(i - 1, 0);
    } else {
      for (Eigen::Index g = 0; g < n; ++g) obj += posterior[g] * cache.s_table(i - 1, g + 1);
    }
  }
  if (rho.is_change(years)) obj -= 2.0 * posterior.dot(floored_log(alpha, options.log_alpha_floor));
  return obj - 2.0 * config_log_prior(rho, h, years);
}

std::vector<double> scan_objectives(const PixelCache& cache, const Vector& posterior, const Vector& alpha,
                                    const Hyperparams& h, RhoOptions options) {
  check_cache_inputs(cache, posterior, alpha);
  const int years = cache.year_count();
  if (years < 2) throw ValidationError("at least two years are required");

  // diff[i] is the cost of moving year i+1 from background to change.
  const Vector change_cost = cache.s_table.rightCols(static_cast<Eigen::Index>(cache.class_count())) * posterior;
  const Vector diff = change_cost - cache.s_table.col(0);
  const double background_total = cache.s_table.col(0).sum();
  const double class_term = -2.0 * posterior.dot(floored_log(alpha, options.log_alpha_floor));

  const double prior_none = -2.0 * config_log_prior(ChangeConfig::no_change(years), h, years);
  const double prior_one = -2.0 * config_log_prior({1, years}, h, years);
  const double prior_two = years >= 3 ? -2.0 * config_log_prior({1, 2}, h, years) : 0.0;

  std::vector<double> out(config_count(years));
  out[0] = background_total + prior_none;

  // One change (r, J): change years r+1..J, accumulated from the end.
  double acc = 0.0;
  for (int r = years - 1; r >= 1; --r) {
    acc += diff[r];
    out[static_cast<std::size_t>(r)] = background_total + acc + class_term + prior_one;
  }

  // Two changes (r1, r2), r2 < J: extend the change segment one year at a time.
  std::size_t slot = static_cast<std::size_t>(years);
  for (int r1 = 1; r1 < years; ++r1) {
    acc = 0.0;
    for (int r2 = r1 + 1; r2 < years; ++r2) {
      acc += diff[r2 - 1];
      out[slot++] = background_total + acc + class_term + prior_two;
    }
  }
  return out;
}

ChangeConfig update_rho(const PixelCache& cache, const Vector& posterior, const Vector& alpha,
                        const Hyperparams& h, RhoOptions options) {
  const auto objectives = scan_objectives(cache, posterior, alpha, h, options);
  const auto configs = enumerate_configs(cache.year_count());
  std::size_t best = 0;
  for (std::size_t c = 1; c < objectives.size(); ++c) {
    if (objectives[c] < objectives[best]) best = c;
  }
  return configs[best];
}

double log_dirichlet(const Vector& alpha, std::span<const double> dirichlet, double log_alpha_floor) {
  if (alpha.size() != static_cast<Eigen::Index>(dirichlet.size())) {
    throw ValidationError("alpha length does not match Dirichlet weights");
  }
  const Vector la = floored_log(alpha, log_alpha_floor);
  double sum = 0.0;
  double out = 0.0;
  for (std::size_t k = 0; k < dirichlet.size(); ++k) {
    sum += dirichlet[k];
    out += (dirichlet[k] - 1.0) * la[static_cast<Eigen::Index>(k)] - std::lgamma(dirichlet[k]);
  }
  return out + std::lgamma(sum);
}

double compute_q(std::span<const PixelCache> caches, std::span<const Vector> posteriors,
                 std::span<const ChangeConfig> rhos, const Vector& alpha, const Hyperparams& h,
                 RhoOptions options) {
  if (caches.size() != posteriors.size() || caches.size() != rhos.size()) {
    throw ValidationError("caches, posteriors and configurations must align");
  }
  // Neumaier summation keeps round-off well below the monotonicity slack.
  double q = 0.0;
  double carry = 0.0;
  auto add = [&](double x) {
    const double t = q + x;
    carry += std::abs(q) >= std::abs(x) ? (q - t) + x : (x - t) + q;
    q = t;
  };
  for (std::size_t v = 0; v < caches.size(); ++v) {
    add(-0.5 * rho_objective(caches[v], rhos[v], posteriors[v], alpha, h, options));
  }
  const auto weights = h.dirichlet_weights(static_cast<std::size_t>(alpha.size()));
  add(log_dirichlet(alpha, weights, options.log_alpha_floor));
  return q + carry;
}

FitResult fit_region(std::span<const PixelSeries> region, const ClassLibrary& input_library,
                     const Hyperparams& h, const EmOptions& options) {
  if (region.empty()) throw ValidationError("region has no pixels");
  input_library.validate();
  if (input_library.classes.empty()) throw ValidationError("library has no change classes");
  h.validate(input_library.size());
  if (options.max_iterations < 1) throw ValidationError("max iterations must be >= 1");

  const int years = region.front().year_count();
  if (years < 2) throw ValidationError("pixels need at least two years");
  for (const auto& px : region) {
    if (px.year_count() != years) {
      throw ValidationError("pixel " + pixel_label(px.id) + " has " + std::to_string(px.year_count()) +
                            " years, expected " + std::to_string(years));
    }
    for (const auto& s : px.years) {
      if (s.bands != input_library.bands || s.times != input_library.times) {
        throw ValidationError("pixel " + pixel_label(px.id) + " dimensions do not match the class library");
      }
    }
  }

  FitResult result;
  result.years = years;
  result.class_ids = input_library.class_ids();

  // Optional spectral compression of library and data.
  ClassLibrary library = input_library;
  std::vector<PixelSeries> compressed;
  std::span<const PixelSeries> pixels = region;
  if (h.compression_rank) {
    auto basis = spectral_basis(input_library.spectral, *h.compression_rank, h.compression_scaling);
    library = compress_library(input_library, basis);
    compressed.resize(region.size());
    detail::parallel_for(region.size(), options.threads, [&](std::size_t v) {
      compressed[v].id = region[v].id;
      for (const auto& s : region[v].years) compressed[v].years.push_back(pca_compress(s, basis));
    });
    pixels = compressed;
    result.compression = std::move(basis);
  }

  const auto prepared = prepare_library(library, h, options.factor);
  const auto dirichlet = h.dirichlet_weights(library.size());
  const RhoOptions rho_options{options.log_alpha_floor};
  const std::size_t n = pixels.size();

  std::vector<PixelCache> caches(n);
  detail::parallel_for(n, options.threads, [&](std::size_t v) { caches[v] = build_cache(pixels[v], prepared); });

  std::vector<ChangeConfig> rhos(n, ChangeConfig::no_change(years));
  auto posteriors_for = [&](const Vector& alpha) {
    std::vector<Vector> post(n);
    detail::parallel_for(n, options.threads, [&](std::size_t v) {
      try {
        post[v] = options.posterior == PosteriorMode::ChangeSegment ? class_posterior(caches[v], alpha, rhos[v])
                                                                    : class_posterior(caches[v], alpha);
      } catch (const DegeneracyError& e) {
        throw DegeneracyError("pixel " + pixel_label(pixels[v].id) + ": " + e.what());
      }
    });
    return post;
  };

  double pi_sum = 0.0;
  for (const double w : dirichlet) pi_sum += w;
  Vector alpha(static_cast<Eigen::Index>(dirichlet.size()));
  for (std::size_t k = 0; k < dirichlet.size(); ++k) alpha[static_cast<Eigen::Index>(k)] = dirichlet[k] / pi_sum;

  const double scale = options.raw_delta_q ? 1.0 : static_cast<double>(n);
  for (int t = 1; t <= options.max_iterations; ++t) {
    const auto post = posteriors_for(alpha);
    const double q_start = compute_q(caches, post, rhos, alpha, h, rho_options);

    std::vector<Vector> changed;
    for (std::size_t v = 0; v < n; ++v) {
      if (rhos[v].is_change(years)) changed.push_back(post[v]);
    }
    const Vector next_alpha = update_alpha(changed, dirichlet);

    detail::parallel_for(n, options.threads, [&](std::size_t v) {
      rhos[v] = update_rho(caches[v], post[v], next_alpha, h, rho_options);
    });

    const double q = compute_q(caches, post, rhos, next_alpha, h, rho_options);
    const double alpha_step = (next_alpha - alpha).cwiseAbs().maxCoeff();
    alpha = next_alpha;
    result.q_trace.push_back(q);
    result.q_ascent.push_back(q - q_start);
    result.iterations = t;
    if (t > 1) {
      const double dq = std::abs(q - result.q_trace[result.q_trace.size() - 2]) / scale;
      if (dq < h.epsilon && alpha_step <= options.alpha_tolerance) {
        result.converged = true;
        break;
      }
    }
  }
  result.alpha = alpha;

  const auto final_post = posteriors_for(alpha);
  result.pixels.resize(n);
  detail::parallel_for(n, options.threads, [&](std::size_t v) {
    auto& fit = result.pixels[v];
    fit.id = pixels[v].id;
    fit.rho = rhos[v];
    fit.posterior = final_post[v];
    const auto modal = modal_index(fit.posterior, result.class_ids);
    fit.modal_class = result.class_ids[modal];
    fit.nochange_probability = nochange_probability(scan_objectives(caches[v], fit.posterior, alpha, h, rho_options));
    if (options.impute) fit.imputed = impute_with(pixels[v], fit.rho, modal, prepared);
  });
  return result;
}

std::vector<SpectroTemporalSample> impute_pixel(const PixelSeries& pixel, const PixelFit& fit,
                                                const ClassLibrary& library, const Hyperparams& h) {
  const auto prepared = prepare_library(library, h);
  return impute_with(pixel, fit.rho, library.index_of(fit.modal_class), prepared);
}

}  // namespace landchange
