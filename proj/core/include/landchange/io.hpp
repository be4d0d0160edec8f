#pragma once

// File formats.
//
// Dataset, text form (CSV with a commented header):
//
//   # landchange-dataset v1
//   # bands: 7
//   # times: 19
//   # years: 10
//   # scale: 1
//   # missing: NA
//   # band_labels: b1,b2,b3,b4,b5,b6,b7      (optional)
//   # grid: 50x50                            (optional, rows x cols)
//   # config_hash: 0123456789abcdef          (optional provenance)
//   pixel,year,band,t1,...,tT
//   px00000,1,1,312,305,...
//
// One record per (pixel, year, band); years and bands are 1-based and every
// pixel carries all J*B records. The missing sentinel marks missing cells.
// Stored numbers divided by `scale` give model units.
//
// Dataset, binary form (little-endian):
//   "LCDSBIN1", u32 bands, u32 times, u32 years, f64 scale,
//   u32 grid_rows, u32 grid_cols (0 = no grid), str config_hash,
//   u32 n_labels, str labels..., u64 n_pixels, then per pixel:
//   str id, f64 values[J*B*T], u8 missing[J*B*T]   (year, band, time order)
//   where str = u32 length + bytes.
//
// Class library: JSON, matrices as nested row-major arrays. See
// library_to_json.

#include "landchange/em.hpp"
#include "landchange/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace landchange {

struct GridShape {
  int rows = 0;
  int cols = 0;
};

struct RegionDataset {
  int bands = 0;
  int times = 0;
  int years = 0;
  double scale = 1.0;
  std::vector<std::string> band_labels;
  std::optional<GridShape> grid;
  std::string config_hash;
  /// Values in stored units.
  std::vector<PixelSeries> pixels;

  void validate() const;
  /// Pixels in model units (divided by scale), optionally with any-band
  /// missingness expanded to all bands.
  std::vector<PixelSeries> model_pixels(bool expand_missing = false) const;
};

enum class DatasetFormat { Text, Binary };

/// Detects text or binary form from the file contents.
RegionDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const RegionDataset& dataset, const std::filesystem::path& path,
                  DatasetFormat format = DatasetFormat::Text);
RegionDataset parse_dataset_text(std::string_view text);
std::string format_dataset_text(const RegionDataset& dataset);

/// True if the file starts like a dataset in either form.
bool looks_like_dataset(const std::filesystem::path& path);

struct TruthRecord {
  std::string pixel;
  ChangeConfig rho;
  int class_id = -1;
};

/// JSON lines: {"pixel":..,"rho1":..,"rho2":..,"class":..,"config_hash":..}
void write_truth(const std::filesystem::path& path, std::span<const TruthRecord> records,
                 const std::string& config_hash);
std::vector<TruthRecord> read_truth(const std::filesystem::path& path, std::string* config_hash = nullptr);

/// CSV "pixel,f1..fJ" with "# units: fraction|percent" in the header.
/// Percent files are converted to fractions on load.
using ReferenceFractions = std::map<std::string, std::vector<double>>;
ReferenceFractions read_reference(const std::filesystem::path& path);
void write_reference(const std::filesystem::path& path, const ReferenceFractions& reference,
                     bool percent = false);

std::string library_to_json(const ClassLibrary& library);
ClassLibrary library_from_json(std::string_view text);
ClassLibrary load_library(const std::filesystem::path& path);
void save_library(const ClassLibrary& library, const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text);

/// 64-bit FNV-1a, as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace landchange
