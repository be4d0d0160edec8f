#include "landchange/metrics.hpp"

#include "landchange/error.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>

namespace landchange {

namespace {

void require_valid(const ChangeConfig& rho, int years, const char* what) {
  if (!rho.valid(years)) {
    throw ValidationError(std::string(what) + " configuration (" + std::to_string(rho.rho1) + ", " +
                          std::to_string(rho.rho2) + ") is invalid for J=" + std::to_string(years));
  }
}

double quantile_sorted(const std::vector<double>& x, double p) {
  const double h = (static_cast<double>(x.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

}  // namespace

AccuracyTriple accuracy(const ChangeConfig& estimate, const ChangeConfig& truth, int years) {
  require_valid(estimate, years, "estimated");
  require_valid(truth, years, "true");
  int both = 0;
  int est_change = 0;
  int true_change = 0;
  int agree = 0;
  for (int i = 1; i <= years; ++i) {
    const bool e = !estimate.in_background(i);
    const bool t = !truth.in_background(i);
    both += e && t;
    est_change += e;
    true_change += t;
    agree += e == t;
  }
  return {true_change > 0 ? static_cast<double>(both) / true_change : 0.0,
          est_change > 0 ? static_cast<double>(both) / est_change : 0.0,
          static_cast<double>(agree) / years};
}

double concordance(const ChangeConfig& estimate, std::span<const double> fractions) {
  const int years = static_cast<int>(fractions.size());
  require_valid(estimate, years, "estimated");
  double sum = 0.0;
  for (int i = 1; i <= years; ++i) {
    const double f = fractions[static_cast<std::size_t>(i - 1)];
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("reference fractions must lie in [0, 1]");
    sum += estimate.in_background(i) ? 1.0 - f : f;
  }
  return sum / years;
}

Quantiles quantiles(std::vector<double> values) {
  if (values.empty()) throw ValidationError("cannot summarize an empty sample");
  std::sort(values.begin(), values.end());
  Quantiles q;
  q.min = values.front();
  q.max = values.back();
  q.q1 = quantile_sorted(values, 0.25);
  q.median = quantile_sorted(values, 0.5);
  q.q3 = quantile_sorted(values, 0.75);
  const double iqr = q.q3 - q.q1;
  const double lo = q.q1 - 1.5 * iqr;
  const double hi = q.q3 + 1.5 * iqr;
  q.whisker_low = *std::find_if(values.begin(), values.end(), [&](double v) { return v >= lo; });
  q.whisker_high = *std::find_if(values.rbegin(), values.rend(), [&](double v) { return v <= hi; });
  return q;
}

BatchSummary summarize_batch(std::span<const ConfigMap> estimates, std::span<const ConfigMap> truths,
                             int years) {
  if (estimates.size() != truths.size()) throw ValidationError("estimate and truth replication counts differ");
  if (estimates.empty()) throw ValidationError("batch has no replications");
  BatchSummary out;
  std::vector<double> p;
  std::vector<double> u;
  std::vector<double> a;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    const auto& est = estimates[r];
    const auto& tru = truths[r];
    if (est.size() != tru.size() || est.empty()) {
      throw ValidationError("replication " + std::to_string(r) + ": pixel id sets differ");
    }
    AccuracyTriple sum;
    for (const auto& [id, rho] : est) {
      const auto it = tru.find(id);
      if (it == tru.end()) {
        throw ValidationError("replication " + std::to_string(r) + ": pixel '" + id + "' has no truth");
      }
      const auto t = accuracy(rho, it->second, years);
      sum.producer += t.producer;
      sum.user += t.user;
      sum.overall += t.overall;
    }
    const double n = static_cast<double>(est.size());
    out.replications.push_back({sum.producer / n, sum.user / n, sum.overall / n});
    out.pixels += est.size();
    p.push_back(out.replications.back().producer);
    u.push_back(out.replications.back().user);
    a.push_back(out.replications.back().overall);
  }
  const double reps = static_cast<double>(out.replications.size());
  for (const auto& r : out.replications) {
    out.mean.producer += r.producer / reps;
    out.mean.user += r.user / reps;
    out.mean.overall += r.overall / reps;
  }
  out.producer = quantiles(p);
  out.user = quantiles(u);
  out.overall = quantiles(a);
  return out;
}

ChangeConfig threshold_baseline(const PixelSeries& pixel, const ClassLibrary& library, const Hyperparams& h,
                                double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ValidationError("baseline threshold must lie in [0, 1)");
  library.validate();
  const int years = pixel.year_count();
  if (years < 2) throw ValidationError("pixels need at least two years");
  const PreparedGaussian background(effective_cov(library, library.background.id, h));

  std::vector<bool> flagged(static_cast<std::size_t>(years) + 1, false);
  if (threshold > 0.0) {
    for (int i = 1; i <= years; ++i) {
      const auto& sample = pixel.years[static_cast<std::size_t>(i - 1)];
      const auto n_obs = static_cast<double>(sample.size() - sample.missing_count());
      if (n_obs == 0) continue;
      const auto terms = year_terms(sample, background);
      const double maha = terms.s_statistic - background.log_det() - static_cast<double>(sample.missing_count());
      const boost::math::chi_squared dist(n_obs);
      flagged[static_cast<std::size_t>(i)] = maha > boost::math::quantile(boost::math::complement(dist, threshold));
    }
  }

  int best_start = 0;
  int best_len = 0;
  for (int i = 2; i <= years;) {
    if (!flagged[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    int j = i;
    while (j + 1 <= years && flagged[static_cast<std::size_t>(j + 1)]) ++j;
    if (j - i + 1 > best_len) {
      best_start = i;
      best_len = j - i + 1;
    }
    i = j + 1;
  }
  if (best_len == 0) return ChangeConfig::no_change(years);
  return {best_start - 1, best_start + best_len - 1};
}

}  // namespace landchange
