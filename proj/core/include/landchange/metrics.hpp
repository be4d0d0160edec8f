#pragma once

#include "landchange/em.hpp"
#include "landchange/model.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace landchange {

/// Producer's (recall), user's (precision) and overall accuracy of the
/// per-year change indicators.
struct AccuracyTriple {
  double producer = 0.0;
  double user = 0.0;
  double overall = 0.0;
};

/// P and U are 0 when their denominators are 0.
AccuracyTriple accuracy(const ChangeConfig& estimate, const ChangeConfig& truth, int years);

/// Expected accuracy against per-year reference change fractions f in [0,1]:
/// mean over years of (1 - f_i) on background years and f_i on change years.
double concordance(const ChangeConfig& estimate, std::span<const double> fractions);

/// Five-number summary with 1.5 IQR whisker limits. Quantiles use linear
/// interpolation between order statistics.
struct Quantiles {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
};

Quantiles quantiles(std::vector<double> values);

struct BatchSummary {
  std::vector<AccuracyTriple> replications;  // per-replication pixel means
  AccuracyTriple mean;                       // mean of replication means
  Quantiles producer;
  Quantiles user;
  Quantiles overall;
  std::size_t pixels = 0;
};

using ConfigMap = std::map<std::string, ChangeConfig>;

/// Estimates and truths are keyed by pixel id, one map per replication;
/// id sets must agree exactly.
BatchSummary summarize_batch(std::span<const ConfigMap> estimates, std::span<const ConfigMap> truths,
                             int years);

/// Label attached to every report that includes the threshold baseline.
inline constexpr const char* kBaselineCaveat =
    "threshold baseline: a simple background-likelihood stub, not a reproduction of any published "
    "comparator";

/// Flags a year when its observed-data log-likelihood under the background
/// effective Gaussian falls below the `threshold` quantile of that
/// likelihood for genuine background years (a chi-square tail on the
/// observed Mahalanobis distance). The longest flagged run becomes the
/// change segment; runs cannot start in year 1.
ChangeConfig threshold_baseline(const PixelSeries& pixel, const ClassLibrary& library,
                                const Hyperparams& h, double threshold);

}  // namespace landchange
