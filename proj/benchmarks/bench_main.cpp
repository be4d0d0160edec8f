#include "landchange/em.hpp"
#include "landchange/gaussian.hpp"
#include "landchange/simulate.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace landchange;

namespace {

Replication replication(int bands, int times, int pixels, double missing) {
  SimSpec spec;
  spec.library = synthetic_library(bands, times);
  spec.n_change = pixels / 2;
  spec.n_nochange = pixels - pixels / 2;
  spec.min_missing_fraction = missing;
  return make_replication(spec, 0);
}

std::vector<PixelSeries> series_of(const Replication& rep) {
  std::vector<PixelSeries> out;
  for (const auto& lp : rep) out.push_back(lp.series);
  return out;
}

// One pixel-year against the background at the case-study shape (7 x 19).
void BM_YearTerms(benchmark::State& state) {
  const double missing = static_cast<double>(state.range(0)) / 100.0;
  const auto rep = replication(7, 19, 1, missing);
  const auto lib = synthetic_library(7, 19);
  const auto prepared = prepare_library(lib, Hyperparams{});
  const auto& sample = rep.front().series.years.front();
  for (auto _ : state) benchmark::DoNotOptimize(year_terms(sample, prepared.background()));
}
BENCHMARK(BM_YearTerms)->Arg(0)->Arg(20)->Arg(50);

void BM_BuildCache(benchmark::State& state) {
  const auto rep = replication(7, 19, 1, 0.3);
  const auto prepared = prepare_library(synthetic_library(7, 19), Hyperparams{});
  for (auto _ : state) benchmark::DoNotOptimize(build_cache(rep.front().series, prepared));
}
BENCHMARK(BM_BuildCache);

// All configurations of one pixel for J years.
void BM_ScanObjectives(benchmark::State& state) {
  const int years = static_cast<int>(state.range(0));
  SimSpec spec;
  spec.library = synthetic_library(2, 4);
  spec.years = years;
  spec.n_change = 1;
  spec.n_nochange = 0;
  const auto rep = make_replication(spec, 0);
  const Hyperparams h;
  const auto cache = build_cache(rep.front().series, prepare_library(*spec.library, h));
  const Vector alpha = Vector::Constant(2, 0.5);
  const Vector post = class_posterior(cache, alpha);
  for (auto _ : state) benchmark::DoNotOptimize(scan_objectives(cache, post, alpha, h));
  state.SetComplexityN(years);
}
BENCHMARK(BM_ScanObjectives)->RangeMultiplier(2)->Range(4, 64)->Complexity();

// A full fit of one 120-pixel replication at 30% missing.
void BM_FitRegion(benchmark::State& state) {
  const int bands = static_cast<int>(state.range(0));
  const int times = static_cast<int>(state.range(1));
  const auto region = series_of(replication(bands, times, 120, 0.3));
  const auto lib = synthetic_library(bands, times);
  for (auto _ : state) benchmark::DoNotOptimize(fit_region(region, lib, Hyperparams{}));
}
BENCHMARK(BM_FitRegion)->Args({3, 6})->Args({7, 19})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
