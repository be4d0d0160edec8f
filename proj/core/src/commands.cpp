#include "landchange/commands.hpp"

#include "landchange/error.hpp"
#include "landchange/metrics.hpp"

#include "json.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#ifndef LANDCHANGE_VERSION
#define LANDCHANGE_VERSION "unknown"
#endif

namespace landchange {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) { return format_double(v); }

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::string scaling_name(PcaScaling s) { return s == PcaScaling::Inverse ? "inverse" : "inverse-sqrt"; }

std::string posterior_name(PosteriorMode m) {
  return m == PosteriorMode::ChangeSegment ? "change-segment" : "full-series";
}

void echo_hyper(ConfigEcho& e, const Hyperparams& h) {
  e["pi0"] = fmt(h.pi0);
  e["piR"] = fmt(h.piR);
  e["kappa0"] = fmt(h.kappa0);
  e["kappac"] = fmt(h.kappac);
  e["epsilon"] = fmt(h.epsilon);
  e["dirichlet"] = h.dirichlet.empty() ? "default" : join(h.dirichlet);
  e["K"] = h.compression_rank ? std::to_string(*h.compression_rank) : "none";
  e["pca_scaling"] = scaling_name(h.compression_scaling);
}

json echo_json(const ConfigEcho& e) {
  json j = json::object();
  for (const auto& [k, v] : e) j[k] = v;
  return j;
}

json versions_json() {
  return {{"landchange", LANDCHANGE_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__},
          {"cxx", static_cast<long>(__cplusplus)}};
}

std::string two_digit_level(double level) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "missing_%02d", static_cast<int>(std::lround(level * 100.0)));
  return buf;
}

std::string rep_name(int r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rep_%04d", r);
  return buf;
}

/// Dataset files under `root` (or root itself), sorted.
std::vector<fs::path> find_datasets(const fs::path& root) {
  if (!fs::exists(root)) throw IoError("dataset path '" + root.string() + "' does not exist");
  if (!fs::is_directory(root)) return {root};
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && looks_like_dataset(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ValidationError("no dataset files under '" + root.string() + "'");
  return out;
}

/// Per-dataset output directory: the dataset's path relative to the input
/// root, minus its extension.
fs::path output_dir_for(const fs::path& input_root, const fs::path& dataset, const fs::path& output) {
  if (!fs::is_directory(input_root)) return output;
  auto rel = fs::relative(dataset, input_root);
  rel.replace_extension();
  return output / rel;
}

struct Provenance {
  std::string config_hash;
  std::string dataset;
  std::string dataset_hash;
  std::string dataset_config_hash;
  int years = 0;
  std::optional<GridShape> grid;
};

std::string csv_preamble(const std::string& kind, const Provenance& p) {
  std::string out = "# landchange " + kind + "\n# config_hash: " + p.config_hash + "\n# dataset: " + p.dataset +
                    "\n# dataset_hash: " + p.dataset_hash;
  if (!p.dataset_config_hash.empty()) out += "\n# dataset_config_hash: " + p.dataset_config_hash;
  out += "\n# years: " + std::to_string(p.years);
  if (p.grid) out += "\n# grid: " + std::to_string(p.grid->rows) + "x" + std::to_string(p.grid->cols);
  return out + '\n';
}

/// Row-major grid of one per-pixel value.
std::string grid_csv(const std::string& kind, const Provenance& p, const std::vector<std::string>& cells) {
  std::string out = csv_preamble(kind, p);
  for (int r = 0; r < p.grid->rows; ++r) {
    for (int c = 0; c < p.grid->cols; ++c) {
      out += (c ? "," : "") + cells[static_cast<std::size_t>(r * p.grid->cols + c)];
    }
    out += '\n';
  }
  return out;
}

std::string change_map_csv(const std::string& kind, const Provenance& p,
                           const std::vector<std::pair<std::string, ChangeConfig>>& rows,
                           const std::vector<std::string>& extra_header = {}) {
  std::string out = csv_preamble(kind, p);
  for (const auto& line : extra_header) out += "# " + line + '\n';
  out += "pixel,rho1,rho2\n";
  for (const auto& [id, rho] : rows) out += id + ',' + std::to_string(rho.rho1) + ',' + std::to_string(rho.rho2) + '\n';
  return out;
}

void check_dims(const RegionDataset& ds, const ClassLibrary& lib, const fs::path& path) {
  if (ds.bands != lib.bands || ds.times != lib.times) {
    throw ValidationError(path.string() + ": dataset is " + std::to_string(ds.bands) + "x" + std::to_string(ds.times) +
                          " (bands x times) but the class library is " + std::to_string(lib.bands) + "x" +
                          std::to_string(lib.times));
  }
}

void require_output(const fs::path& out) {
  if (out.empty()) throw ValidationError("an output path is required");
}

void write_fit_outputs(const fs::path& dir, const FitResult& fit, const RegionDataset& ds, const Provenance& prov,
                       const FitConfig& config, const ConfigEcho& echo, double wall_seconds) {
  std::vector<std::pair<std::string, ChangeConfig>> rows;
  for (const auto& px : fit.pixels) rows.emplace_back(px.id, px.rho);
  write_file(dir / "change_map.csv", change_map_csv("change map", prov, rows));

  std::string nochange = csv_preamble("no-change probability", prov) + "pixel,nochange_probability\n";
  std::string modal = csv_preamble("modal class", prov) + "pixel,modal_class\n";
  std::string post = csv_preamble("class posteriors", prov) + "pixel";
  for (const int id : fit.class_ids) post += ",class_" + std::to_string(id);
  post += '\n';
  for (const auto& px : fit.pixels) {
    nochange += px.id + ',' + fmt(px.nochange_probability) + '\n';
    modal += px.id + ',' + std::to_string(px.modal_class) + '\n';
    post += px.id;
    for (Eigen::Index k = 0; k < px.posterior.size(); ++k) post += ',' + fmt(px.posterior[k]);
    post += '\n';
  }
  write_file(dir / "nochange_prob.csv", nochange);
  write_file(dir / "modal_class.csv", modal);
  write_file(dir / "class_posteriors.csv", post);

  std::string alpha = csv_preamble("alpha", prov) + "class,alpha\n";
  for (std::size_t k = 0; k < fit.class_ids.size(); ++k) {
    alpha += std::to_string(fit.class_ids[k]) + ',' + fmt(fit.alpha[static_cast<Eigen::Index>(k)]) + '\n';
  }
  write_file(dir / "alpha.csv", alpha);

  std::string q = csv_preamble("Q trace", prov) + "iteration,q,q_ascent\n";
  for (std::size_t t = 0; t < fit.q_trace.size(); ++t) {
    q += std::to_string(t + 1) + ',' + fmt(fit.q_trace[t]) + ',' + fmt(fit.q_ascent[t]) + '\n';
  }
  write_file(dir / "q_trace.csv", q);

  if (prov.grid) {
    std::vector<std::string> rho1;
    std::vector<std::string> rho2;
    std::vector<std::string> pn;
    std::vector<std::string> mc;
    for (const auto& px : fit.pixels) {
      rho1.push_back(std::to_string(px.rho.rho1));
      rho2.push_back(std::to_string(px.rho.rho2));
      pn.push_back(fmt(px.nochange_probability));
      mc.push_back(std::to_string(px.modal_class));
    }
    write_file(dir / "grid_rho1.csv", grid_csv("rho1 grid", prov, rho1));
    write_file(dir / "grid_rho2.csv", grid_csv("rho2 grid", prov, rho2));
    write_file(dir / "grid_nochange_prob.csv", grid_csv("no-change probability grid", prov, pn));
    write_file(dir / "grid_modal_class.csv", grid_csv("modal class grid", prov, mc));
  }

  if (config.em.impute) {
    RegionDataset imputed;
    imputed.years = ds.years;
    imputed.times = ds.times;
    imputed.grid = ds.grid;
    imputed.config_hash = prov.config_hash;
    if (fit.compression) {
      // Compressed fits impute K principal-component rows per time.
      imputed.bands = fit.compression->rank;
      imputed.scale = 1.0;
      for (int k = 1; k <= imputed.bands; ++k) imputed.band_labels.push_back("pc" + std::to_string(k));
    } else {
      imputed.bands = ds.bands;
      imputed.scale = ds.scale;
      imputed.band_labels = ds.band_labels;
    }
    for (const auto& px : fit.pixels) {
      PixelSeries series{px.id, px.imputed};
      if (!fit.compression) {
        for (auto& s : series.years) s.values *= ds.scale;
      }
      imputed.pixels.push_back(std::move(series));
    }
    write_file(dir / "imputed.csv", format_dataset_text(imputed));
  }

  json meta;
  meta["command"] = "fit";
  meta["config"] = echo_json(echo);
  meta["config_hash"] = prov.config_hash;
  meta["dataset"] = prov.dataset;
  meta["dataset_hash"] = prov.dataset_hash;
  meta["dataset_config_hash"] = prov.dataset_config_hash;
  meta["seed"] = config.seed;
  meta["threads"] = config.em.threads;
  meta["versions"] = versions_json();
  meta["rng"] = Rng::kAlgorithm;
  meta["wall_seconds"] = wall_seconds;
  meta["pixels"] = fit.pixels.size();
  meta["years"] = fit.years;
  meta["iterations"] = fit.iterations;
  meta["converged"] = fit.converged;
  meta["class_ids"] = fit.class_ids;
  std::vector<double> alpha_v(fit.alpha.data(), fit.alpha.data() + fit.alpha.size());
  meta["alpha"] = alpha_v;
  meta["q_final"] = fit.q_trace.empty() ? 0.0 : fit.q_trace.back();
  if (fit.compression) {
    const auto& b = *fit.compression;
    std::vector<double> ev(b.eigenvalues.data(), b.eigenvalues.data() + b.eigenvalues.size());
    meta["compression"] = {{"enabled", true}, {"K", b.rank}, {"scaling", scaling_name(b.scaling)}, {"eigenvalues", ev}};
  } else {
    meta["compression"] = {{"enabled", false}};
  }
  write_file(dir / "metadata.json", meta.dump(2) + '\n');
}

void validate_fit_config(const FitConfig& c) {
  if (c.library.empty()) throw ValidationError("a class library path is required");
  if (c.dataset.empty()) throw ValidationError("a dataset path is required");
  require_output(c.output);
  if (c.em.threads < 1) throw ValidationError("threads must be >= 1");
  if (c.em.max_iterations < 1) throw ValidationError("max iterations must be >= 1");
  if (!(c.hyper.epsilon > 0.0)) throw ValidationError("epsilon must be positive");
}

std::string vector_text(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

}  // namespace

std::string config_hash(const ConfigEcho& echo) {
  std::string canonical;
  for (const auto& [k, v] : echo) canonical += k + '=' + v + '\n';
  return fnv1a_hex(canonical);
}

ConfigEcho FitConfig::echo() const {
  ConfigEcho e;
  e["command"] = "fit";
  e["library"] = library.string();
  e["dataset"] = dataset.string();
  echo_hyper(e, hyper);
  e["max_iterations"] = std::to_string(em.max_iterations);
  e["raw_delta_q"] = em.raw_delta_q ? "true" : "false";
  e["alpha_tolerance"] = fmt(em.alpha_tolerance);
  e["log_alpha_floor"] = fmt(em.log_alpha_floor);
  e["posterior"] = posterior_name(em.posterior);
  e["jitter"] = fmt(em.factor.jitter);
  e["impute"] = em.impute ? "true" : "false";
  e["expand_missing"] = expand_missing ? "true" : "false";
  e["seed"] = std::to_string(seed);
  return e;
}

ConfigEcho SimulateConfig::echo() const {
  ConfigEcho e;
  e["command"] = "simulate";
  e["library"] = library.string();
  e["pool_dataset"] = pool_dataset.string();
  e["pool_truth"] = pool_truth.string();
  e["missing_levels"] = join(missing_levels);
  e["replications"] = std::to_string(replications);
  e["n_change"] = std::to_string(n_change);
  e["n_nochange"] = std::to_string(n_nochange);
  e["years"] = std::to_string(years);
  e["seed"] = std::to_string(seed);
  e["recovery_probability"] = fmt(recovery_probability);
  e["missing_pattern"] = pattern == MissingPattern::Uniform ? "uniform" : "year-end-runs";
  e["kappa0"] = fmt(kappa0);
  e["kappac"] = fmt(kappac);
  e["rng"] = Rng::kAlgorithm;
  return e;
}

ConfigEcho EvaluateConfig::echo() const {
  ConfigEcho e;
  e["command"] = "evaluate";
  e["fit"] = fit.string();
  e["truth"] = truth.string();
  e["reference"] = reference.string();
  e["published_check"] = published_check ? "true" : "false";
  e["tolerance"] = fmt(tolerance);
  e["force"] = force ? "true" : "false";
  return e;
}

ConfigEcho BaselineConfig::echo() const {
  ConfigEcho e;
  e["command"] = "baseline";
  e["library"] = library.string();
  e["dataset"] = dataset.string();
  echo_hyper(e, hyper);
  e["threshold"] = fmt(threshold);
  e["expand_missing"] = expand_missing ? "true" : "false";
  return e;
}

ConfigMap ChangeMap::as_map() const {
  ConfigMap out;
  for (const auto& [id, rho] : entries) {
    if (!out.emplace(id, rho).second) throw ValidationError("duplicate pixel '" + id + "' in change map");
  }
  return out;
}

ChangeMap read_change_map(const fs::path& path) {
  const auto text = read_file(path);
  ChangeMap out;
  std::size_t lineno = 0;
  bool seen_columns = false;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path.string() + ": line " + std::to_string(lineno);
    if (line.front() == '#') {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto key = line.substr(1, colon - 1);
        auto value = line.substr(colon + 1);
        key.erase(0, key.find_first_not_of(' '));
        value.erase(0, value.find_first_not_of(' '));
        out.header[key] = value;
      }
      continue;
    }
    if (!seen_columns) {
      if (line != "pixel,rho1,rho2") throw ValidationError(where + ": expected 'pixel,rho1,rho2'");
      seen_columns = true;
      continue;
    }
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) throw ValidationError(where + ": expected 3 fields");
    try {
      out.entries.emplace_back(line.substr(0, c1), ChangeConfig{std::stoi(line.substr(c1 + 1, c2 - c1 - 1)),
                                                                std::stoi(line.substr(c2 + 1))});
    } catch (const std::logic_error&) {
      throw ValidationError(where + ": malformed change points");
    }
  }
  if (!seen_columns) throw ValidationError(path.string() + ": no change map columns");
  return out;
}

ExitCode run_fit(const FitConfig& config, std::ostream& log) {
  validate_fit_config(config);
  const auto library = load_library(config.library);
  config.hyper.validate(library.size());
  if (config.hyper.compression_rank &&
      (*config.hyper.compression_rank < 1 || *config.hyper.compression_rank > library.bands)) {
    throw ValidationError("K must lie in [1, bands]");
  }
  const auto echo = config.echo();
  const auto hash = config_hash(echo);
  const auto datasets = find_datasets(config.dataset);

  bool all_converged = true;
  for (const auto& path : datasets) {
    const auto raw = read_file(path);
    const auto ds = load_dataset(path);
    check_dims(ds, library, path);
    const auto pixels = ds.model_pixels(config.expand_missing);

    const auto t0 = std::chrono::steady_clock::now();
    const auto fit = fit_region(pixels, library, config.hyper, config.em);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const Provenance prov{hash, path.string(), fnv1a_hex(raw), ds.config_hash, ds.years, ds.grid};
    const auto dir = output_dir_for(config.dataset, path, config.output);
    write_fit_outputs(dir, fit, ds, prov, config, echo, wall);
    log << path.string() << ": " << fit.pixels.size() << " pixels, " << fit.iterations << " iterations"
        << (fit.converged ? "" : " (not converged)") << " -> " << dir.string() << '\n';
    if (!fit.converged) {
      log << "warning: " << path.string() << " stopped at the iteration cap (" << config.em.max_iterations << ")\n";
      all_converged = false;
    }
  }
  return all_converged ? ExitCode::Ok : ExitCode::NonConvergence;
}

ExitCode run_simulate(const SimulateConfig& config, std::ostream& log) {
  require_output(config.output);
  if (config.missing_levels.empty()) throw ValidationError("at least one missing level is required");
  std::set<std::string> level_dirs;
  for (const double level : config.missing_levels) {
    if (!(level >= 0.0 && level < 1.0)) throw ValidationError("missing levels must lie in [0, 1)");
    if (!level_dirs.insert(two_digit_level(level)).second) {
      throw ValidationError("missing levels must differ at percent resolution");
    }
  }
  if (config.pool_dataset.empty() != config.pool_truth.empty()) {
    throw ValidationError("exemplar mode needs both a pool dataset and its truth sidecar");
  }

  SimSpec spec;
  spec.years = config.years;
  spec.n_change = config.n_change;
  spec.n_nochange = config.n_nochange;
  spec.replications = config.replications;
  spec.recovery_probability = config.recovery_probability;
  spec.missing_pattern = config.pattern;
  spec.kappa0 = config.kappa0;
  spec.kappac = config.kappac;
  int bands = 0;
  int times = 0;
  double scale = 1.0;
  std::vector<std::string> band_labels;
  if (!config.pool_dataset.empty()) {
    const auto pool_ds = load_dataset(config.pool_dataset);
    std::string unused;
    const auto truth = read_truth(config.pool_truth, &unused);
    std::map<std::string, ChangeConfig> by_id;
    for (const auto& t : truth) by_id[t.pixel] = t.rho;
    ExemplarPool pool;
    for (const auto& px : pool_ds.pixels) {
      const auto it = by_id.find(px.id);
      if (it == by_id.end()) throw ValidationError("pool pixel '" + px.id + "' has no truth record");
      if (!it->second.valid(px.year_count())) throw ValidationError("pool pixel '" + px.id + "' has an invalid truth");
      for (int i = 1; i <= px.year_count(); ++i) {
        auto& part = it->second.in_background(i) ? pool.background : pool.change;
        part.push_back(px.years[static_cast<std::size_t>(i - 1)]);
      }
    }
    spec.pool = std::move(pool);
    bands = pool_ds.bands;
    times = pool_ds.times;
    scale = pool_ds.scale;
    band_labels = pool_ds.band_labels;
  } else {
    spec.library = config.library.empty() ? synthetic_library() : load_library(config.library);
    bands = spec.library->bands;
    times = spec.library->times;
  }
  spec.validate();

  const auto echo = config.echo();
  const auto hash = config_hash(echo);
  const std::string ext = config.format == DatasetFormat::Text ? ".csv" : ".bin";
  json batches = json::array();
  for (const double level : config.missing_levels) {
    SimSpec s = spec;
    s.min_missing_fraction = level;
    s.seed = derive_seed(config.seed, static_cast<std::uint64_t>(std::llround(level * 1000.0)));
    const auto dirname = two_digit_level(level);
    const auto dir = config.output / dirname;
    for (int r = 0; r < s.replications; ++r) {
      const auto rep = make_replication(s, r);
      RegionDataset ds;
      ds.bands = bands;
      ds.times = times;
      ds.years = s.years;
      ds.scale = scale;
      ds.band_labels = band_labels;
      ds.config_hash = hash;
      std::vector<TruthRecord> truth;
      for (const auto& px : rep) {
        ds.pixels.push_back(px.series);
        truth.push_back({px.series.id, px.truth, px.class_id});
      }
      save_dataset(ds, dir / (rep_name(r) + ext), config.format);
      write_truth(dir / (rep_name(r) + ".truth.jsonl"), truth, hash);
    }
    batches.push_back({{"dir", dirname},
                       {"min_missing_fraction", level},
                       {"seed", s.seed},
                       {"replications", s.replications}});
    log << dirname << ": " << s.replications << " replications of " << s.n_change + s.n_nochange << " pixels\n";
  }
  json meta;
  meta["command"] = "simulate";
  meta["config"] = echo_json(echo);
  meta["config_hash"] = hash;
  meta["rng"] = Rng::kAlgorithm;
  meta["versions"] = versions_json();
  meta["bands"] = bands;
  meta["times"] = times;
  meta["batches"] = std::move(batches);
  write_file(config.output / "batch.json", meta.dump(2) + '\n');
  return ExitCode::Ok;
}

namespace {

struct TruthPair {
  fs::path truth;
  fs::path change_map;
  std::string group;
};

std::vector<TruthPair> pair_truth_files(const EvaluateConfig& c) {
  std::vector<TruthPair> out;
  if (!fs::exists(c.truth)) throw IoError("truth path '" + c.truth.string() + "' does not exist");
  if (!fs::is_directory(c.truth)) {
    out.push_back({c.truth, c.fit / "change_map.csv", ""});
    return out;
  }
  const std::string suffix = ".truth.jsonl";
  for (const auto& entry : fs::recursive_directory_iterator(c.truth)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_regular_file() || !name.ends_with(suffix)) continue;
    const auto rel = fs::relative(entry.path(), c.truth);
    const auto stem = rel.parent_path() / name.substr(0, name.size() - suffix.size());
    out.push_back({entry.path(), c.fit / stem / "change_map.csv", rel.parent_path().generic_string()});
  }
  std::sort(out.begin(), out.end(), [](const TruthPair& a, const TruthPair& b) { return a.truth < b.truth; });
  if (out.empty()) throw ValidationError("no truth sidecars under '" + c.truth.string() + "'");
  return out;
}

std::optional<double> group_fraction(const std::string& group, const json& batch) {
  if (batch.is_object() && batch.contains("batches")) {
    for (const auto& b : batch["batches"]) {
      if (b.value("dir", std::string{}) == group) return b.at("min_missing_fraction").get<double>();
    }
  }
  int pct = 0;
  if (std::sscanf(group.c_str(), "missing_%d", &pct) == 1) return pct / 100.0;
  return std::nullopt;
}

json quantiles_json(const Quantiles& q) {
  return {{"min", q.min},       {"q1", q.q1},       {"median", q.median},          {"q3", q.q3},
          {"max", q.max},       {"whisker_low", q.whisker_low}, {"whisker_high", q.whisker_high}};
}

std::string quantiles_row(const std::string& group, const char* metric, const Quantiles& q) {
  return group + ',' + metric + ',' + fmt(q.min) + ',' + fmt(q.q1) + ',' + fmt(q.median) + ',' + fmt(q.q3) + ',' +
         fmt(q.max) + ',' + fmt(q.whisker_low) + ',' + fmt(q.whisker_high) + '\n';
}

ExitCode evaluate_truth(const EvaluateConfig& c, const std::string& hash, std::ostream& log) {
  const auto pairs = pair_truth_files(c);
  json batch;
  if (fs::is_directory(c.truth) && fs::exists(c.truth / "batch.json")) batch = json::parse(read_file(c.truth / "batch.json"));

  struct Group {
    std::vector<ConfigMap> estimates;
    std::vector<ConfigMap> truths;
    int years = 0;
  };
  std::map<std::string, Group> groups;
  for (const auto& p : pairs) {
    std::string truth_hash;
    const auto truth = read_truth(p.truth, &truth_hash);
    const auto map = read_change_map(p.change_map);
    const auto it = map.header.find("dataset_config_hash");
    const std::string fit_hash = it == map.header.end() ? "" : it->second;
    if (!c.force && fit_hash != truth_hash) {
      throw ValidationError(p.change_map.string() + " was fitted on data with config hash '" + fit_hash +
                            "' but " + p.truth.string() + " has '" + truth_hash + "' (use --force to override)");
    }
    const auto years_it = map.header.find("years");
    if (years_it == map.header.end()) throw ValidationError(p.change_map.string() + ": header lacks 'years'");
    const int years = std::stoi(years_it->second);
    auto& g = groups[p.group];
    if (g.years != 0 && g.years != years) throw ValidationError("replications in '" + p.group + "' differ in J");
    g.years = years;
    ConfigMap t;
    for (const auto& r : truth) {
      if (!t.emplace(r.pixel, r.rho).second) throw ValidationError(p.truth.string() + ": duplicate pixel " + r.pixel);
    }
    g.estimates.push_back(map.as_map());
    g.truths.push_back(std::move(t));
  }

  std::string table = "# landchange accuracy table\n# config_hash: " + hash +
                      "\ngroup,missing_fraction,replications,pixels,producer,user,overall\n";
  std::string qfile = "# landchange accuracy quantiles\n# config_hash: " + hash +
                      "\ngroup,metric,min,q1,median,q3,max,whisker_low,whisker_high\n";
  json jt = json::array();
  std::vector<std::pair<double, double>> observed;  // (fraction, overall)
  for (const auto& [name, g] : groups) {
    const auto s = summarize_batch(g.estimates, g.truths, g.years);
    const auto frac = group_fraction(name, batch);
    table += name + ',' + (frac ? fmt(*frac) : "") + ',' + std::to_string(s.replications.size()) + ',' +
             std::to_string(s.pixels) + ',' + fmt(s.mean.producer) + ',' + fmt(s.mean.user) + ',' +
             fmt(s.mean.overall) + '\n';
    qfile += quantiles_row(name, "producer", s.producer) + quantiles_row(name, "user", s.user) +
             quantiles_row(name, "overall", s.overall);
    json row = {{"group", name},
                {"replications", s.replications.size()},
                {"pixels", s.pixels},
                {"producer", s.mean.producer},
                {"user", s.mean.user},
                {"overall", s.mean.overall},
                {"quantiles",
                 {{"producer", quantiles_json(s.producer)},
                  {"user", quantiles_json(s.user)},
                  {"overall", quantiles_json(s.overall)}}}};
    if (frac) {
      row["missing_fraction"] = *frac;
      observed.emplace_back(*frac, s.mean.overall);
    }
    jt.push_back(std::move(row));
    log << (name.empty() ? "(all)" : name) << ": P=" << fmt(s.mean.producer) << " U=" << fmt(s.mean.user)
        << " A=" << fmt(s.mean.overall) << " over " << s.replications.size() << " replications\n";
  }
  write_file(c.output / "accuracy_table.csv", table);
  write_file(c.output / "accuracy_table.json",
             json{{"config_hash", hash}, {"config", echo_json(c.echo())}, {"rows", jt}}.dump(2) + '\n');
  write_file(c.output / "quantiles.csv", qfile);

  if (c.published_check) {
    std::string check = "# landchange published-accuracy check\n# config_hash: " + hash +
                        "\n# tolerance: " + fmt(c.tolerance) +
                        "\nmissing_fraction,published,observed,difference,within_tolerance\n";
    int matched = 0;
    for (const auto& row : kPublishedAccuracy) {
      for (const auto& [frac, overall] : observed) {
        if (std::abs(frac - row[0]) > 1e-9) continue;
        ++matched;
        const double diff = overall - row[1];
        const bool ok = std::abs(diff) <= c.tolerance;
        check += fmt(row[0]) + ',' + fmt(row[1]) + ',' + fmt(overall) + ',' + fmt(diff) + ',' + (ok ? "yes" : "no") + '\n';
        log << "published check " << fmt(row[0]) << ": " << fmt(overall) << " vs " << fmt(row[1])
            << (ok ? " within" : " outside") << " tolerance\n";
      }
    }
    if (matched == 0) throw ValidationError("no evaluated batch matches a published missing fraction (0.2..0.5)");
    write_file(c.output / "published_check.csv", check);
  }
  return ExitCode::Ok;
}

ExitCode evaluate_reference(const EvaluateConfig& c, const std::string& hash, std::ostream& log) {
  const auto refs = read_reference(c.reference);
  const auto map = read_change_map(c.fit / "change_map.csv");
  std::string out = "# landchange concordance\n# config_hash: " + hash + "\npixel,concordance\n";
  std::vector<double> values;
  std::vector<std::string> cells;
  for (const auto& [id, rho] : map.entries) {
    const auto it = refs.find(id);
    if (it == refs.end()) throw ValidationError("pixel '" + id + "' has no reference fractions");
    const double cv = concordance(rho, it->second);
    values.push_back(cv);
    cells.push_back(fmt(cv));
    out += id + ',' + fmt(cv) + '\n';
  }
  if (values.empty()) throw ValidationError("change map is empty");
  write_file(c.output / "concordance.csv", out);
  const auto grid_it = map.header.find("grid");
  if (grid_it != map.header.end()) {
    int rows = 0;
    int cols = 0;
    if (std::sscanf(grid_it->second.c_str(), "%dx%d", &rows, &cols) == 2 &&
        static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) == cells.size()) {
      std::string grid = "# landchange concordance grid\n# config_hash: " + hash + '\n';
      for (int r = 0; r < rows; ++r) {
        for (int col = 0; col < cols; ++col) grid += (col ? "," : "") + cells[static_cast<std::size_t>(r * cols + col)];
        grid += '\n';
      }
      write_file(c.output / "concordance_grid.csv", grid);
    }
  }
  double mean = 0.0;
  for (const double v : values) mean += v / static_cast<double>(values.size());
  write_file(c.output / "concordance_summary.json",
             json{{"config_hash", hash}, {"config", echo_json(c.echo())}, {"pixels", values.size()}, {"mean", mean},
                  {"quantiles", quantiles_json(quantiles(values))}}
                     .dump(2) +
                 '\n');
  log << "concordance over " << values.size() << " pixels: mean " << fmt(mean) << '\n';
  return ExitCode::Ok;
}

}  // namespace

ExitCode run_evaluate(const EvaluateConfig& config, std::ostream& log) {
  require_output(config.output);
  if (config.fit.empty()) throw ValidationError("a fit output directory is required");
  if (config.truth.empty() == config.reference.empty()) {
    throw ValidationError("give exactly one of a truth sidecar or a reference fractions file");
  }
  if (!(config.tolerance >= 0.0)) throw ValidationError("tolerance must be non-negative");
  const auto hash = config_hash(config.echo());
  if (!config.reference.empty()) {
    if (config.published_check) throw ValidationError("the published-accuracy check needs truth sidecars");
    return evaluate_reference(config, hash, log);
  }
  return evaluate_truth(config, hash, log);
}

ExitCode run_train_classes(const TrainConfig& config, std::ostream& log) {
  require_output(config.output);
  if (config.dataset.empty() || config.labels.empty()) throw ValidationError("a dataset and a labels file are required");
  const auto ds = load_dataset(config.dataset);
  const auto pixels = ds.model_pixels();
  std::map<std::string, const PixelSeries*> by_id;
  for (const auto& px : pixels) by_id[px.id] = &px;

  TrainingSet training;
  training.background_id = config.background_id;
  const auto text = read_file(config.labels);
  std::size_t lineno = 0;
  std::size_t start = 0;
  bool header_seen = false;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto where = config.labels.string() + ": line " + std::to_string(lineno);
    if (!header_seen) {
      if (!line.starts_with("pixel,class")) throw ValidationError(where + ": expected 'pixel,class[,label]'");
      header_seen = true;
      continue;
    }
    const auto c1 = line.find(',');
    if (c1 == std::string::npos) throw ValidationError(where + ": expected at least 2 fields");
    const auto c2 = line.find(',', c1 + 1);
    const auto id = line.substr(0, c1);
    int cls = 0;
    try {
      cls = std::stoi(line.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1));
    } catch (const std::logic_error&) {
      throw ValidationError(where + ": class must be an integer");
    }
    if (c2 != std::string::npos) training.labels[cls] = line.substr(c2 + 1);
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError(where + ": pixel '" + id + "' is not in the dataset");
    for (const auto& s : it->second->years) {
      if (!s.fully_observed()) {
        throw ValidationError(where + ": training pixel '" + id + "' has missing values; training needs complete data");
      }
      training.samples[cls].push_back(s);
    }
  }
  if (!training.samples.contains(config.background_id)) {
    throw ValidationError("no training pixels for background class " + std::to_string(config.background_id));
  }
  const auto library = estimate_class_params(training, config.flipflop);
  save_library(library, config.output);
  log << "trained " << library.classes.size() << " change classes plus background " << config.background_id << " -> "
      << config.output.string() << '\n';
  return ExitCode::Ok;
}

ExitCode run_baseline(const BaselineConfig& config, std::ostream& log) {
  require_output(config.output);
  if (config.library.empty() || config.dataset.empty()) throw ValidationError("a library and a dataset are required");
  if (!(config.threshold >= 0.0 && config.threshold < 1.0)) throw ValidationError("threshold must lie in [0, 1)");
  const auto library = load_library(config.library);
  config.hyper.validate(library.size());
  const auto raw = read_file(config.dataset);
  const auto ds = load_dataset(config.dataset);
  check_dims(ds, library, config.dataset);
  const auto pixels = ds.model_pixels(config.expand_missing);
  const auto hash = config_hash(config.echo());
  std::vector<std::pair<std::string, ChangeConfig>> rows;
  for (const auto& px : pixels) rows.emplace_back(px.id, threshold_baseline(px, library, config.hyper, config.threshold));
  const Provenance prov{hash, config.dataset.string(), fnv1a_hex(raw), ds.config_hash, ds.years, ds.grid};
  write_file(config.output / "change_map.csv",
             change_map_csv("change map", prov, rows,
                            {"method: threshold-baseline", "threshold: " + fmt(config.threshold),
                             std::string("caveat: ") + kBaselineCaveat}));
  log << kBaselineCaveat << '\n' << rows.size() << " pixels -> " << (config.output / "change_map.csv").string() << '\n';
  return ExitCode::Ok;
}

ExitCode run_demo_library(const fs::path& output, std::ostream& log) {
  require_output(output);
  const auto lib = synthetic_library();
  save_library(lib, output);
  std::vector<std::string> ids;
  for (const auto& c : lib.classes) ids.push_back(std::to_string(c.id));
  log << "wrote synthetic library (background " << lib.background.id << ", classes " << vector_text(ids) << ") -> "
      << output.string() << '\n';
  return ExitCode::Ok;
}

ExitCode guarded(const std::function<ExitCode()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::Validation;
  } catch (const DegeneracyError& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::Validation;
  } catch (const ConvergenceError& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::NonConvergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::Io;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::Io;
  } catch (const json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return ExitCode::Validation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return ExitCode::Failure;
  }
}

}  // namespace landchange
