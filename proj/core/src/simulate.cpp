#include "landchange/simulate.hpp"

#include "landchange/error.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <tuple>
#include <utility>

namespace landchange {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

namespace {

// Full 64x64 -> 128-bit product as (high, low).
std::pair<std::uint64_t, std::uint64_t> mul_wide(std::uint64_t a, std::uint64_t b) {
  const std::uint64_t a_lo = a & 0xffffffffU;
  const std::uint64_t a_hi = a >> 32;
  const std::uint64_t b_lo = b & 0xffffffffU;
  const std::uint64_t b_hi = b >> 32;
  const std::uint64_t ll = a_lo * b_lo;
  const std::uint64_t lh = a_lo * b_hi;
  const std::uint64_t hl = a_hi * b_lo;
  const std::uint64_t hh = a_hi * b_hi;
  const std::uint64_t mid = (ll >> 32) + (lh & 0xffffffffU) + (hl & 0xffffffffU);
  return {hh + (lh >> 32) + (hl >> 32) + (mid >> 32), (mid << 32) | (ll & 0xffffffffU)};
}

}  // namespace

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ValidationError("Rng::below requires n > 0");
  auto [high, low] = mul_wide(engine_(), n);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) std::tie(high, low) = mul_wide(engine_(), n);
  }
  return high;
}

double Rng::normal() {
  if (spare_) {
    const double z = *spare_;
    spare_.reset();
    return z;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ChangeConfig random_config(int years, Rng& rng, double pi0, double piR) {
  if (years < 2) throw ValidationError("at least two years are required");
  if (!(pi0 >= 0.0 && pi0 <= 1.0) || !(piR >= 0.0 && piR <= 1.0)) {
    throw ValidationError("simulation probabilities must lie in [0, 1]");
  }
  if (!(rng.uniform() < pi0)) return ChangeConfig::no_change(years);
  const auto m = static_cast<std::uint64_t>(years - 1);
  if (years >= 3 && rng.uniform() < piR) {
    auto index = rng.below(m * (m - 1) / 2);
    for (int r1 = 1; r1 < years; ++r1) {
      const auto row = static_cast<std::uint64_t>(years - 1 - r1);
      if (index < row) return {r1, r1 + 1 + static_cast<int>(index)};
      index -= row;
    }
    throw InvariantError("two-change index out of range");
  }
  return {1 + static_cast<int>(rng.below(m)), years};
}

void SimSpec::validate() const {
  if (years < 2) throw ValidationError("simulation needs at least two years");
  if (n_change < 0 || n_nochange < 0 || n_change + n_nochange == 0) {
    throw ValidationError("pixel counts must be non-negative and not both zero");
  }
  if (replications < 1) throw ValidationError("replications must be >= 1");
  if (!(min_missing_fraction >= 0.0 && min_missing_fraction < 1.0)) {
    throw ValidationError("minimum missing fraction must lie in [0, 1)");
  }
  if (!(recovery_probability >= 0.0 && recovery_probability <= 1.0)) {
    throw ValidationError("recovery probability must lie in [0, 1]");
  }
  if (!(kappa0 >= 0.0) || !(kappac >= 0.0)) throw ValidationError("kappa values must be >= 0");
  if (!pool && !library) throw ValidationError("simulation needs a class library or an exemplar pool");
  if (library && !pool) {
    library->validate();
    if (library->classes.empty()) throw ValidationError("library has no change classes");
    if (!class_weights.empty()) {
      if (class_weights.size() != library->size()) throw ValidationError("one class weight per change class");
      double sum = 0.0;
      for (const double w : class_weights) {
        if (!(w >= 0.0)) throw ValidationError("class weights must be >= 0");
        sum += w;
      }
      if (!(sum > 0.0)) throw ValidationError("class weights must not all be zero");
    }
  }
}

PixelSynthesizer::PixelSynthesizer(const SimSpec& spec) : spec_(&spec) {
  spec.validate();
  if (spec.pool) {
    const auto* first = !spec.pool->background.empty() ? &spec.pool->background.front()
                        : !spec.pool->change.empty()   ? &spec.pool->change.front()
                                                       : nullptr;
    if (first == nullptr) throw ValidationError("exemplar pool is exhausted (empty)");
    bands_ = first->bands;
    times_ = first->times;
    for (const auto* part : {&spec.pool->background, &spec.pool->change}) {
      for (const auto& s : *part) {
        s.validate();
        if (s.bands != bands_ || s.times != times_) throw ValidationError("exemplar pool dimensions differ");
      }
    }
    return;
  }

  const auto& lib = *spec.library;
  bands_ = lib.bands;
  times_ = lib.times;
  Hyperparams h;
  h.kappa0 = spec.kappa0;
  h.kappac = spec.kappac;
  auto make = [](const GaussianSpec& g) {
    Eigen::LLT<Matrix> llt(g.dense_covariance());
    if (llt.info() != Eigen::Success) throw DegeneracyError("sampling covariance is not positive definite");
    return Sampler{g.mean, llt.matrixL()};
  };
  background_ = make(effective_cov(lib, lib.background.id, h));
  double total = 0.0;
  for (std::size_t k = 0; k < lib.size(); ++k) {
    classes_.push_back(make(effective_cov(lib, lib.classes[k].id, h)));
    class_ids_.push_back(lib.classes[k].id);
    total += spec.class_weights.empty() ? 1.0 : spec.class_weights[k];
    cumulative_weights_.push_back(total);
  }
  for (auto& w : cumulative_weights_) w /= total;
}

SpectroTemporalSample PixelSynthesizer::draw(const Sampler& s, Rng& rng) const {
  Vector z(s.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return SpectroTemporalSample::observed(bands_, times_, s.mean + s.lower * z);
}

SpectroTemporalSample PixelSynthesizer::pick(const std::vector<SpectroTemporalSample>& pool, Rng& rng) const {
  if (pool.empty()) throw ValidationError("exemplar pool is exhausted: no years for a required segment type");
  return pool[static_cast<std::size_t>(rng.below(pool.size()))];
}

std::size_t PixelSynthesizer::pick_class(Rng& rng) const {
  const double u = rng.uniform();
  for (std::size_t k = 0; k < cumulative_weights_.size(); ++k) {
    if (u < cumulative_weights_[k]) return k;
  }
  return cumulative_weights_.size() - 1;
}

LabeledPixel PixelSynthesizer::operator()(const ChangeConfig& truth, Rng& rng, std::string id) const {
  const int years = spec_->years;
  if (!truth.valid(years)) throw ValidationError("truth configuration is invalid for the simulated years");
  LabeledPixel out;
  out.truth = truth;
  out.series.id = std::move(id);

  std::size_t cls = 0;
  if (!spec_->pool && truth.is_change(years)) {
    cls = pick_class(rng);
    out.class_id = class_ids_[cls];
  }
  for (int i = 1; i <= years; ++i) {
    const bool background = truth.in_background(i);
    if (spec_->pool) {
      out.series.years.push_back(pick(background ? spec_->pool->background : spec_->pool->change, rng));
    } else {
      out.series.years.push_back(draw(background ? *background_ : classes_[cls], rng));
    }
  }
  apply_missingness(out.series, spec_->min_missing_fraction, spec_->missing_pattern, rng);
  return out;
}

LabeledPixel synthesize_pixel(const SimSpec& spec, const ChangeConfig& truth, Rng& rng) {
  return PixelSynthesizer(spec)(truth, rng);
}

void apply_missingness(PixelSeries& pixel, double fraction, MissingPattern pattern, Rng& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("missing fraction must lie in [0, 1)");
  if (pixel.years.empty()) return;
  std::size_t total = 0;
  std::size_t missing = 0;
  for (const auto& s : pixel.years) {
    total += static_cast<std::size_t>(s.size());
    missing += static_cast<std::size_t>(s.missing_count());
  }
  const auto wanted = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
  const std::size_t target = std::min(wanted, total - 1);
  if (missing >= target) return;

  auto mask = [&](std::size_t year, Eigen::Index cell) {
    auto& s = pixel.years[year];
    if (s.missing[cell]) return;
    s.missing[cell] = true;
    s.values[cell] = std::numeric_limits<double>::quiet_NaN();
    ++missing;
  };

  if (pattern == MissingPattern::Uniform) {
    std::vector<std::pair<std::size_t, Eigen::Index>> open;
    open.reserve(total - missing);
    for (std::size_t y = 0; y < pixel.years.size(); ++y) {
      for (Eigen::Index c = 0; c < pixel.years[y].size(); ++c) {
        if (!pixel.years[y].missing[c]) open.emplace_back(y, c);
      }
    }
    // Partial Fisher-Yates: the first `need` slots become a uniform sample.
    const std::size_t need = target - missing;
    for (std::size_t i = 0; i < need; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(open.size() - i));
      std::swap(open[i], open[j]);
      mask(open[i].first, open[i].second);
    }
    return;
  }

  const auto years = static_cast<std::uint64_t>(pixel.years.size());
  while (missing < target) {
    const auto y = static_cast<std::size_t>(rng.below(years));
    const auto& s = pixel.years[y];
    const int length = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.times)));
    for (int t = s.times - 1; t >= s.times - length && missing < target; --t) {
      for (int b = 0; b < s.bands && missing < target; ++b) mask(y, flat_index(b, t, s.times));
    }
  }
}

Replication make_replication(const SimSpec& spec, int replication) {
  const PixelSynthesizer synth(spec);
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(replication)));
  Replication out;
  out.reserve(static_cast<std::size_t>(spec.n_change + spec.n_nochange));
  int k = 0;
  auto next_id = [&] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "px%05d", k++);
    return std::string(buf);
  };
  for (int i = 0; i < spec.n_nochange; ++i) {
    out.push_back(synth(ChangeConfig::no_change(spec.years), rng, next_id()));
  }
  for (int i = 0; i < spec.n_change; ++i) {
    const auto truth = random_config(spec.years, rng, 1.0, spec.recovery_probability);
    out.push_back(synth(truth, rng, next_id()));
  }
  return out;
}

std::vector<Replication> make_batch(const SimSpec& spec) {
  spec.validate();
  std::vector<Replication> out;
  out.reserve(static_cast<std::size_t>(spec.replications));
  for (int r = 0; r < spec.replications; ++r) out.push_back(make_replication(spec, r));
  return out;
}

ClassLibrary synthetic_library(int bands, int times, double sd) {
  if (bands < 1 || times < 2 || !(sd > 0.0)) throw ValidationError("invalid synthetic library dimensions");
  // Reflectance x 10000 for seven land bands (red, NIR, blue, green, NIR2, SWIR1, SWIR2).
  constexpr std::array<double, 7> forest{300, 3000, 200, 500, 2800, 1500, 700};
  constexpr std::array<double, 7> pasture{900, 2400, 550, 850, 2500, 2900, 2100};
  constexpr std::array<double, 7> burned{1300, 1700, 950, 1150, 1900, 2400, 2300};
  constexpr std::array<double, 7> forest_amp{40, 300, 30, 50, 250, 150, 60};
  constexpr std::array<double, 7> pasture_amp{200, 700, 120, 180, 650, 400, 300};
  constexpr std::array<double, 7> burned_amp{100, 250, 80, 90, 200, 300, 250};

  auto ar1 = [times](double variance, double phi) {
    Matrix m(times, times);
    for (int i = 0; i < times; ++i) {
      for (int j = 0; j < times; ++j) m(i, j) = variance * std::pow(phi, std::abs(i - j));
    }
    return m;
  };
  auto profile = [bands, times](const std::array<double, 7>& base, const std::array<double, 7>& amp,
                                double phase) {
    Vector mean(static_cast<Eigen::Index>(bands) * times);
    for (int b = 0; b < bands; ++b) {
      for (int t = 0; t < times; ++t) {
        const double season = std::sin(std::numbers::pi * (t + 0.5) / times + phase);
        mean[flat_index(b, t, times)] = base[b % 7] + amp[b % 7] * season;
      }
    }
    return mean;
  };

  ClassLibrary lib;
  lib.bands = bands;
  lib.times = times;
  lib.spectral = Matrix(bands, bands);
  for (int i = 0; i < bands; ++i) {
    for (int j = 0; j < bands; ++j) lib.spectral(i, j) = std::pow(0.5, std::abs(i - j));
  }
  lib.background = {2, "Evergreen Broadleaf Forests", profile(forest, forest_amp, 0.0),
                    KroneckerCovariance{lib.spectral, ar1(sd * sd, 0.6)}};
  lib.classes.push_back({12, "Croplands", profile(pasture, pasture_amp, 0.4), ar1(1.3 * sd * sd, 0.7)});
  lib.classes.push_back({16, "Barren", profile(burned, burned_amp, -0.3), ar1(0.9 * sd * sd, 0.5)});
  lib.validate();
  return lib;
}

}  // namespace landchange
