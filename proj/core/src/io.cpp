#include "landchange/io.hpp"

#include "landchange/error.hpp"

#include "json.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_map>

namespace landchange {

using nlohmann::json;

namespace {

constexpr std::string_view kTextMagic = "# landchange-dataset v1";
constexpr std::string_view kBinaryMagic = "LCDSBIN1";
constexpr std::string_view kReferenceMagic = "# landchange-reference v1";

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  }
  return lines;
}

int parse_int(std::string_view s, const std::string& context) {
  s = trim(s);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(context + ": expected an integer, got '" + std::string(s) + "'");
  }
  return v;
}

[[noreturn]] void fail_at(std::size_t line, const std::string& msg) {
  throw ValidationError("line " + std::to_string(line) + ": " + msg);
}

void check_pixel_id(std::string_view id) {
  if (id.empty()) throw ValidationError("empty pixel id");
  for (const char c : id) {
    if (c == ',' || c == ' ' || c == '\t' || c == '"') {
      throw ValidationError("pixel id '" + std::string(id) + "' contains a separator character");
    }
  }
}

// Little-endian encoding.
class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    buf_.append(reinterpret_cast<const char*>(bytes), sizeof(T));
  }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(std::string_view s) { buf_.append(s); }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw ValidationError("binary dataset truncated at byte " + std::to_string(pos_));
    }
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

PixelSeries empty_pixel(std::string id, int bands, int times, int years) {
  PixelSeries px;
  px.id = std::move(id);
  const Eigen::Index n = static_cast<Eigen::Index>(bands) * times;
  for (int y = 0; y < years; ++y) {
    SpectroTemporalSample s;
    s.bands = bands;
    s.times = times;
    s.values = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
    s.missing = Mask::Constant(n, true);
    px.years.push_back(std::move(s));
  }
  return px;
}

RegionDataset parse_dataset_binary(std::string_view data) {
  ByteReader in(data);
  if (in.raw(kBinaryMagic.size()) != kBinaryMagic) throw ValidationError("not a binary landchange dataset");
  RegionDataset ds;
  ds.bands = static_cast<int>(in.get<std::uint32_t>());
  ds.times = static_cast<int>(in.get<std::uint32_t>());
  ds.years = static_cast<int>(in.get<std::uint32_t>());
  ds.scale = in.get<double>();
  const auto rows = in.get<std::uint32_t>();
  const auto cols = in.get<std::uint32_t>();
  if (rows != 0 || cols != 0) ds.grid = GridShape{static_cast<int>(rows), static_cast<int>(cols)};
  ds.config_hash = in.get_string();
  const auto n_labels = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_labels; ++i) ds.band_labels.push_back(in.get_string());
  const auto n_pixels = in.get<std::uint64_t>();
  if (ds.bands <= 0 || ds.times <= 0 || ds.years <= 0) throw ValidationError("binary dataset has zero dimensions");
  const Eigen::Index cells = static_cast<Eigen::Index>(ds.bands) * ds.times;
  for (std::uint64_t p = 0; p < n_pixels; ++p) {
    auto px = empty_pixel(in.get_string(), ds.bands, ds.times, ds.years);
    for (auto& s : px.years) {
      for (Eigen::Index c = 0; c < cells; ++c) s.values[c] = in.get<double>();
    }
    for (auto& s : px.years) {
      for (Eigen::Index c = 0; c < cells; ++c) s.missing[c] = in.get<std::uint8_t>() != 0;
    }
    ds.pixels.push_back(std::move(px));
  }
  if (!in.done()) throw ValidationError("binary dataset has trailing bytes");
  ds.validate();
  return ds;
}

std::string format_dataset_binary(const RegionDataset& ds) {
  ByteWriter out;
  out.raw(kBinaryMagic);
  out.put(static_cast<std::uint32_t>(ds.bands));
  out.put(static_cast<std::uint32_t>(ds.times));
  out.put(static_cast<std::uint32_t>(ds.years));
  out.put(ds.scale);
  out.put(static_cast<std::uint32_t>(ds.grid ? ds.grid->rows : 0));
  out.put(static_cast<std::uint32_t>(ds.grid ? ds.grid->cols : 0));
  out.put_string(ds.config_hash);
  out.put(static_cast<std::uint32_t>(ds.band_labels.size()));
  for (const auto& l : ds.band_labels) out.put_string(l);
  out.put(static_cast<std::uint64_t>(ds.pixels.size()));
  for (const auto& px : ds.pixels) {
    out.put_string(px.id);
    for (const auto& s : px.years) {
      for (Eigen::Index c = 0; c < s.size(); ++c) out.put(s.values[c]);
    }
    for (const auto& s : px.years) {
      for (Eigen::Index c = 0; c < s.size(); ++c) out.put(static_cast<std::uint8_t>(s.missing[c] ? 1 : 0));
    }
  }
  return std::move(out.str());
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ValidationError(what + " must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ValidationError(what + " has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + " must be an array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

void RegionDataset::validate() const {
  if (bands <= 0 || times <= 0 || years <= 0) throw ValidationError("dataset dimensions must be positive");
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ValidationError("dataset scale must be positive");
  if (!band_labels.empty() && static_cast<int>(band_labels.size()) != bands) {
    throw ValidationError("expected " + std::to_string(bands) + " band labels");
  }
  if (grid && (grid->rows <= 0 || grid->cols <= 0 ||
               static_cast<std::size_t>(grid->rows) * static_cast<std::size_t>(grid->cols) != pixels.size())) {
    throw ValidationError("grid shape does not match the number of pixels");
  }
  std::set<std::string> ids;
  for (const auto& px : pixels) {
    check_pixel_id(px.id);
    if (!ids.insert(px.id).second) throw ValidationError("duplicate pixel id '" + px.id + "'");
    if (px.year_count() != years) throw ValidationError("pixel '" + px.id + "' has the wrong number of years");
    for (const auto& s : px.years) {
      if (s.bands != bands || s.times != times) throw ValidationError("pixel '" + px.id + "' has wrong dimensions");
      s.validate();
    }
  }
}

std::vector<PixelSeries> RegionDataset::model_pixels(bool expand_missing) const {
  std::vector<PixelSeries> out = pixels;
  for (auto& px : out) {
    for (auto& s : px.years) {
      if (scale != 1.0) s.values /= scale;
      if (expand_missing) s = expand_missing_to_all_bands(s);
    }
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw InvariantError("failed to format a double");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

RegionDataset parse_dataset_text(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty() || trim(lines.front()) != kTextMagic) {
    throw ValidationError("line 1: expected '" + std::string(kTextMagic) + "'");
  }
  RegionDataset ds;
  std::string sentinel = "NA";
  std::size_t i = 1;
  std::set<std::string> seen_keys;
  for (; i < lines.size() && !lines[i].empty() && lines[i].front() == '#'; ++i) {
    const auto body = trim(lines[i].substr(1));
    const auto colon = body.find(':');
    if (colon == std::string_view::npos) fail_at(i + 1, "header line is not 'key: value'");
    const std::string key(trim(body.substr(0, colon)));
    const auto value = trim(body.substr(colon + 1));
    const std::string ctx = "line " + std::to_string(i + 1);
    seen_keys.insert(key);
    if (key == "bands") {
      ds.bands = parse_int(value, ctx);
    } else if (key == "times") {
      ds.times = parse_int(value, ctx);
    } else if (key == "years") {
      ds.years = parse_int(value, ctx);
    } else if (key == "scale") {
      ds.scale = parse_double(value);
    } else if (key == "missing") {
      sentinel = std::string(value);
    } else if (key == "band_labels") {
      for (const auto l : split(value, ',')) ds.band_labels.emplace_back(trim(l));
    } else if (key == "grid") {
      const auto x = value.find('x');
      if (x == std::string_view::npos) fail_at(i + 1, "grid must be ROWSxCOLS");
      ds.grid = GridShape{parse_int(value.substr(0, x), ctx), parse_int(value.substr(x + 1), ctx)};
    } else if (key == "config_hash") {
      ds.config_hash = std::string(value);
    }
    // Unknown keys are ignored for forward compatibility.
  }
  for (const char* required : {"bands", "times", "years"}) {
    if (!seen_keys.contains(required)) throw ValidationError(std::string("dataset header lacks '") + required + "'");
  }
  if (ds.bands <= 0 || ds.times <= 0 || ds.years <= 0) throw ValidationError("dataset dimensions must be positive");
  if (sentinel.empty()) throw ValidationError("missing-value sentinel must not be empty");

  if (i >= lines.size() || !lines[i].starts_with("pixel,")) fail_at(i + 1, "expected the 'pixel,year,band,...' column header");
  if (split(lines[i], ',').size() != static_cast<std::size_t>(3 + ds.times)) {
    fail_at(i + 1, "column header must have 3 + times columns");
  }
  ++i;

  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<char>> filled;
  const std::size_t per_pixel = static_cast<std::size_t>(ds.years) * static_cast<std::size_t>(ds.bands);
  for (; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != static_cast<std::size_t>(3 + ds.times)) {
      fail_at(lineno, "expected " + std::to_string(3 + ds.times) + " fields, got " + std::to_string(fields.size()));
    }
    const std::string id(trim(fields[0]));
    try {
      check_pixel_id(id);
    } catch (const ValidationError& e) {
      fail_at(lineno, e.what());
    }
    const int year = parse_int(fields[1], "line " + std::to_string(lineno));
    const int band = parse_int(fields[2], "line " + std::to_string(lineno));
    if (year < 1 || year > ds.years) fail_at(lineno, "year out of range");
    if (band < 1 || band > ds.bands) fail_at(lineno, "band out of range");

    auto [it, inserted] = index.try_emplace(id, ds.pixels.size());
    if (inserted) {
      ds.pixels.push_back(empty_pixel(id, ds.bands, ds.times, ds.years));
      filled.emplace_back(per_pixel, 0);
    }
    auto& mark = filled[it->second][static_cast<std::size_t>((year - 1) * ds.bands + band - 1)];
    if (mark) fail_at(lineno, "duplicate record for pixel '" + id + "' year " + std::to_string(year) +
                                  " band " + std::to_string(band));
    mark = 1;
    auto& sample = ds.pixels[it->second].years[static_cast<std::size_t>(year - 1)];
    for (int t = 0; t < ds.times; ++t) {
      const auto field = trim(fields[static_cast<std::size_t>(3 + t)]);
      const auto cell = flat_index(band - 1, t, ds.times);
      if (field == sentinel) continue;
      try {
        sample.values[cell] = parse_double(field);
      } catch (const ValidationError& e) {
        fail_at(lineno, e.what());
      }
      if (!std::isfinite(sample.values[cell])) fail_at(lineno, "non-finite value");
      sample.missing[cell] = false;
    }
  }
  for (std::size_t p = 0; p < ds.pixels.size(); ++p) {
    for (const char f : filled[p]) {
      if (!f) throw ValidationError("pixel '" + ds.pixels[p].id + "' is missing some (year, band) records");
    }
  }
  ds.validate();
  return ds;
}

std::string format_dataset_text(const RegionDataset& ds) {
  ds.validate();
  std::string out;
  out += kTextMagic;
  out += "\n# bands: " + std::to_string(ds.bands);
  out += "\n# times: " + std::to_string(ds.times);
  out += "\n# years: " + std::to_string(ds.years);
  out += "\n# scale: " + format_double(ds.scale);
  out += "\n# missing: NA";
  if (!ds.band_labels.empty()) {
    out += "\n# band_labels: ";
    for (std::size_t b = 0; b < ds.band_labels.size(); ++b) out += (b ? "," : "") + ds.band_labels[b];
  }
  if (ds.grid) out += "\n# grid: " + std::to_string(ds.grid->rows) + "x" + std::to_string(ds.grid->cols);
  if (!ds.config_hash.empty()) out += "\n# config_hash: " + ds.config_hash;
  out += "\npixel,year,band";
  for (int t = 1; t <= ds.times; ++t) out += ",t" + std::to_string(t);
  out += '\n';
  for (const auto& px : ds.pixels) {
    for (int y = 0; y < ds.years; ++y) {
      const auto& s = px.years[static_cast<std::size_t>(y)];
      for (int b = 0; b < ds.bands; ++b) {
        out += px.id + ',' + std::to_string(y + 1) + ',' + std::to_string(b + 1);
        for (int t = 0; t < ds.times; ++t) {
          const auto cell = flat_index(b, t, ds.times);
          out += ',';
          out += s.missing[cell] ? std::string("NA") : format_double(s.values[cell]);
        }
        out += '\n';
      }
    }
  }
  return out;
}

RegionDataset load_dataset(const std::filesystem::path& path) {
  const auto data = read_file(path);
  try {
    if (std::string_view(data).starts_with(kBinaryMagic)) return parse_dataset_binary(data);
    return parse_dataset_text(data);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_dataset(const RegionDataset& dataset, const std::filesystem::path& path, DatasetFormat format) {
  dataset.validate();
  write_file(path, format == DatasetFormat::Text ? format_dataset_text(dataset) : format_dataset_binary(dataset));
}

bool looks_like_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::string head(kTextMagic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return head.starts_with(kBinaryMagic) || head == kTextMagic;
}

void write_truth(const std::filesystem::path& path, std::span<const TruthRecord> records,
                 const std::string& config_hash) {
  std::string out;
  for (const auto& r : records) {
    json j = {{"pixel", r.pixel}, {"rho1", r.rho.rho1}, {"rho2", r.rho.rho2}, {"class", r.class_id}};
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    out += j.dump() + '\n';
  }
  write_file(path, out);
}

std::vector<TruthRecord> read_truth(const std::filesystem::path& path, std::string* config_hash) {
  const auto text = read_file(path);
  std::vector<TruthRecord> out;
  std::string hash;
  std::size_t lineno = 0;
  for (const auto line : lines_of(text)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      TruthRecord r{j.at("pixel").get<std::string>(), {j.at("rho1").get<int>(), j.at("rho2").get<int>()},
                    j.value("class", -1)};
      const auto h = j.value("config_hash", std::string{});
      if (out.empty()) {
        hash = h;
      } else if (h != hash) {
        fail_at(lineno, "config_hash differs from earlier lines");
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (config_hash) *config_hash = hash;
  return out;
}

ReferenceFractions read_reference(const std::filesystem::path& path) {
  const auto text = read_file(path);
  const auto lines = lines_of(text);
  bool percent = false;
  std::size_t i = 0;
  for (; i < lines.size() && !lines[i].empty() && lines[i].front() == '#'; ++i) {
    const auto body = trim(lines[i].substr(1));
    if (body.starts_with("units:")) {
      const auto units = trim(body.substr(6));
      if (units == "percent") {
        percent = true;
      } else if (units != "fraction") {
        fail_at(i + 1, "units must be 'fraction' or 'percent'");
      }
    }
  }
  if (i >= lines.size() || !lines[i].starts_with("pixel,")) {
    throw ValidationError(path.string() + ": expected a 'pixel,f1,...' column header");
  }
  const auto years = split(lines[i], ',').size() - 1;
  ReferenceFractions out;
  for (++i; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = split(lines[i], ',');
    if (fields.size() != years + 1) fail_at(i + 1, "wrong number of fields");
    std::vector<double> f;
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = parse_double(fields[k]);
      if (percent) v /= 100.0;
      if (!(v >= 0.0 && v <= 1.0)) fail_at(i + 1, "reference fraction out of range");
      f.push_back(v);
    }
    if (!out.emplace(std::string(trim(fields[0])), std::move(f)).second) fail_at(i + 1, "duplicate pixel id");
  }
  return out;
}

void write_reference(const std::filesystem::path& path, const ReferenceFractions& reference, bool percent) {
  std::string out = std::string(kReferenceMagic) + "\n# units: " + (percent ? "percent" : "fraction") + "\npixel";
  const std::size_t years = reference.empty() ? 0 : reference.begin()->second.size();
  for (std::size_t y = 1; y <= years; ++y) out += ",f" + std::to_string(y);
  out += '\n';
  for (const auto& [id, f] : reference) {
    if (f.size() != years) throw ValidationError("reference rows have different lengths");
    out += id;
    for (const double v : f) out += ',' + format_double(percent ? v * 100.0 : v);
    out += '\n';
  }
  write_file(path, out);
}

std::string library_to_json(const ClassLibrary& library) {
  library.validate();
  json j;
  j["format"] = "landchange-class-library";
  j["version"] = 1;
  j["bands"] = library.bands;
  j["times"] = library.times;
  j["layout"] = "means are band-major (index = band * times + time); matrices are row-major";
  j["normalization"] = "trace(spectral) = bands when estimated by train-classes";
  j["spectral"] = matrix_to_json(library.spectral);
  json bg = {{"id", library.background.id}, {"label", library.background.label},
             {"mean", vector_to_json(library.background.mean)}};
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, DenseCovariance>) {
          bg["covariance"] = matrix_to_json(c.matrix);
        } else {
          if (c.spectral != library.spectral) bg["spectral"] = matrix_to_json(c.spectral);
          bg["temporal"] = matrix_to_json(c.temporal);
        }
      },
      library.background.covariance);
  j["background"] = std::move(bg);
  json classes = json::array();
  for (const auto& c : library.classes) {
    classes.push_back({{"id", c.id}, {"label", c.label}, {"mean", vector_to_json(c.mean)},
                       {"temporal", matrix_to_json(c.temporal)}});
  }
  j["classes"] = std::move(classes);
  return j.dump(1) + '\n';
}

ClassLibrary library_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    if (j.value("format", std::string{}) != "landchange-class-library") {
      throw ValidationError("not a landchange class library (format field)");
    }
    if (j.value("version", 0) != 1) throw ValidationError("unsupported class library version");
    ClassLibrary lib;
    lib.bands = j.at("bands").get<int>();
    lib.times = j.at("times").get<int>();
    lib.spectral = matrix_from_json(j.at("spectral"), "spectral");
    const auto& bg = j.at("background");
    lib.background.id = bg.at("id").get<int>();
    lib.background.label = bg.value("label", std::string{});
    lib.background.mean = vector_from_json(bg.at("mean"), "background mean");
    if (bg.contains("covariance")) {
      lib.background.covariance = DenseCovariance{matrix_from_json(bg["covariance"], "background covariance")};
    } else {
      const Matrix spectral = bg.contains("spectral") ? matrix_from_json(bg["spectral"], "background spectral")
                                                      : lib.spectral;
      lib.background.covariance = KroneckerCovariance{spectral, matrix_from_json(bg.at("temporal"), "background temporal")};
    }
    for (const auto& c : j.at("classes")) {
      lib.classes.push_back({c.at("id").get<int>(), c.value("label", std::string{}),
                             vector_from_json(c.at("mean"), "class mean"),
                             matrix_from_json(c.at("temporal"), "class temporal")});
    }
    lib.validate();
    return lib;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("class library: ") + e.what());
  }
}

ClassLibrary load_library(const std::filesystem::path& path) {
  try {
    return library_from_json(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void save_library(const ClassLibrary& library, const std::filesystem::path& path) {
  write_file(path, library_to_json(library));
}

}  // namespace landchange
