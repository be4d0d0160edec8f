#include "support.hpp"

#include "landchange/error.hpp"
#include "landchange/io.hpp"
#include "landchange/simulate.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

using namespace landchange;
using namespace landchange::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "io_scratch";
  fs::create_directories(dir);
  return dir / name;
}

RegionDataset random_dataset(int bands, int times, int years, int pixels, std::mt19937_64& gen) {
  RegionDataset ds;
  ds.bands = bands;
  ds.times = times;
  ds.years = years;
  ds.scale = 10000.0;
  for (int p = 0; p < pixels; ++p) {
    PixelSeries px;
    px.id = "px" + std::to_string(p);
    for (int y = 0; y < years; ++y) {
      px.years.push_back(random_mask(bands, times, random_vector(bands * times, gen, 1000.0), 0.3, gen));
    }
    ds.pixels.push_back(std::move(px));
  }
  return ds;
}

void check_same(const RegionDataset& a, const RegionDataset& b) {
  REQUIRE(a.pixels.size() == b.pixels.size());
  CHECK(a.bands == b.bands);
  CHECK(a.times == b.times);
  CHECK(a.years == b.years);
  CHECK(a.scale == b.scale);
  CHECK(a.band_labels == b.band_labels);
  CHECK(a.config_hash == b.config_hash);
  CHECK(a.grid.has_value() == b.grid.has_value());
  for (std::size_t p = 0; p < a.pixels.size(); ++p) {
    CHECK(a.pixels[p].id == b.pixels[p].id);
    for (std::size_t y = 0; y < a.pixels[p].years.size(); ++y) {
      const auto& s = a.pixels[p].years[y];
      const auto& t = b.pixels[p].years[y];
      REQUIRE((s.missing == t.missing).all());
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (!s.missing[i]) REQUIRE(s.values[i] == t.values[i]);
      }
    }
  }
}

}  // namespace

TEST_CASE("minimal dataset parses intact") {
  const auto ds = parse_dataset_text(
      "# landchange-dataset v1\n# bands: 1\n# times: 2\n# years: 2\n"
      "pixel,year,band,t1,t2\n"
      "a,1,1,1.5,2\n"
      "a,2,1,-3,4e2\n");
  REQUIRE(ds.pixels.size() == 1);
  CHECK(ds.pixels[0].id == "a");
  CHECK(ds.scale == 1.0);
  CHECK(ds.pixels[0].years[0].values[0] == 1.5);
  CHECK(ds.pixels[0].years[1].values[1] == 400.0);
  CHECK(ds.pixels[0].years[1].fully_observed());
}

TEST_CASE("sentinel marks missing cells exactly") {
  const auto ds = parse_dataset_text(
      "# landchange-dataset v1\n# bands: 2\n# times: 3\n# years: 1\n# missing: -9999\n# scale: 100\n"
      "pixel,year,band,t1,t2,t3\n"
      "a,1,2,5,-9999,7\n"
      "a,1,1,-9999,1,2\n");
  const auto& s = ds.pixels[0].years[0];
  CHECK(s.missing_count() == 2);
  CHECK(s.missing[flat_index(1, 1, 3)]);
  CHECK(s.missing[flat_index(0, 0, 3)]);
  CHECK(s.at(1, 2) == 7.0);
  const auto model = ds.model_pixels();
  CHECK(model[0].years[0].at(1, 2) == doctest::Approx(0.07).epsilon(1e-15));
  const auto expanded = ds.model_pixels(true);
  CHECK(expanded[0].years[0].missing_count() == 4);
}

TEST_CASE("case-study shape is accepted") {
  std::mt19937_64 gen(50);
  auto ds = random_dataset(7, 19, 10, 3, gen);
  ds.band_labels = {"red", "nir", "blue", "green", "nir2", "swir1", "swir2"};
  const auto back = parse_dataset_text(format_dataset_text(ds));
  check_same(ds, back);
}

TEST_CASE("text and binary round trips") {
  std::mt19937_64 gen(51);
  auto ds = random_dataset(2, 4, 3, 6, gen);
  ds.grid = GridShape{2, 3};
  ds.config_hash = "0123456789abcdef";
  ds.band_labels = {"x", "y"};
  for (const auto format : {DatasetFormat::Text, DatasetFormat::Binary}) {
    const auto path = scratch(format == DatasetFormat::Text ? "rt.csv" : "rt.bin");
    save_dataset(ds, path, format);
    CHECK(looks_like_dataset(path));
    const auto back = load_dataset(path);
    check_same(ds, back);
    REQUIRE(back.grid);
    CHECK(back.grid->rows == 2);
    CHECK(back.grid->cols == 3);
  }
  CHECK(format_dataset_text(parse_dataset_text(format_dataset_text(ds))) == format_dataset_text(ds));
}

TEST_CASE("dataset diagnostics name the line") {
  const std::string head = "# landchange-dataset v1\n# bands: 1\n# times: 2\n# years: 2\npixel,year,band,t1,t2\n";
  auto message = [](const std::string& text) {
    try {
      parse_dataset_text(text);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(head + "a,1,1,1,2\na,1,1,1,2\na,2,1,1,2\n").find("line 7") != std::string::npos);
  CHECK(message(head + "a,1,1,1,x\na,2,1,1,2\n").find("line 6") != std::string::npos);
  CHECK(message(head + "a,1,1,1,2\na,3,1,1,2\n").find("line 7") != std::string::npos);
  CHECK(message(head + "a,1,1,1\n").find("line 6") != std::string::npos);
  CHECK(message(head + "a,1,1,1,2\n").find("missing some") != std::string::npos);
  CHECK(message("pixel,year\n").find("line 1") != std::string::npos);
  CHECK_FALSE(message("# landchange-dataset v1\n# bands: 1\n# times: 2\npixel,year,band,t1,t2\n").empty());
  CHECK_THROWS_AS(parse_dataset_text(head + "a,1,1,1,inf\na,2,1,1,2\n"), ValidationError);
}

TEST_CASE("binary diagnostics") {
  std::mt19937_64 gen(52);
  const auto ds = random_dataset(1, 2, 2, 2, gen);
  const auto path = scratch("trunc.bin");
  save_dataset(ds, path, DatasetFormat::Binary);
  auto bytes = read_file(path);
  write_file(path, bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(load_dataset(path), ValidationError);
  CHECK_THROWS_AS(load_dataset(scratch("does_not_exist.csv")), IoError);
}

TEST_CASE("dataset validation") {
  std::mt19937_64 gen(53);
  auto ds = random_dataset(1, 2, 2, 2, gen);
  ds.pixels[1].id = ds.pixels[0].id;
  CHECK_THROWS_AS(ds.validate(), ValidationError);
  ds = random_dataset(1, 2, 2, 2, gen);
  ds.grid = GridShape{3, 3};
  CHECK_THROWS_AS(ds.validate(), ValidationError);
  ds.grid.reset();
  ds.scale = 0.0;
  CHECK_THROWS_AS(ds.validate(), ValidationError);
}

TEST_CASE("truth sidecar round trip") {
  const std::vector<TruthRecord> records{{"a", {3, 7}, 2}, {"b", {10, 10}, -1}};
  const auto path = scratch("truth.jsonl");
  write_truth(path, records, "feedface");
  std::string hash;
  const auto back = read_truth(path, &hash);
  CHECK(hash == "feedface");
  REQUIRE(back.size() == 2);
  CHECK(back[0].pixel == "a");
  CHECK(back[0].rho == ChangeConfig{3, 7});
  CHECK(back[0].class_id == 2);
  CHECK(back[1].rho == ChangeConfig{10, 10});
  write_file(path, "{\"pixel\": \"a\"}\n");
  CHECK_THROWS_AS(read_truth(path), ValidationError);
}

TEST_CASE("reference fractions in both units") {
  const auto path = scratch("ref.csv");
  write_reference(path, {{"a", {0.0, 0.5, 1.0}}}, true);
  const auto back = read_reference(path);
  REQUIRE(back.at("a").size() == 3);
  CHECK(back.at("a")[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(back.at("a")[2] == doctest::Approx(1.0).epsilon(1e-15));
  write_file(path, "# landchange-reference v1\n# units: percent\npixel,f1,f2\nq,25,100\n");
  CHECK(read_reference(path).at("q")[0] == doctest::Approx(0.25));
}

TEST_CASE("class library JSON round trip") {
  std::mt19937_64 gen(54);
  SUBCASE("Kronecker background") {
    const auto lib = random_library(2, 3, 2, gen);
    const auto back = library_from_json(library_to_json(lib));
    CHECK(back.bands == 2);
    CHECK(back.times == 3);
    CHECK(back.spectral == lib.spectral);
    CHECK(back.background.mean == lib.background.mean);
    CHECK(back.classes[1].temporal == lib.classes[1].temporal);
    CHECK(back.classes[1].label == lib.classes[1].label);
    CHECK(std::get<KroneckerCovariance>(back.background.covariance).temporal ==
          std::get<KroneckerCovariance>(lib.background.covariance).temporal);
  }
  SUBCASE("dense background") {
    auto lib = random_library(2, 2, 1, gen);
    lib.background.covariance = DenseCovariance{random_spd(4, gen)};
    const auto path = scratch("lib.json");
    save_library(lib, path);
    const auto back = load_library(path);
    CHECK(std::get<DenseCovariance>(back.background.covariance).matrix ==
          std::get<DenseCovariance>(lib.background.covariance).matrix);
  }
  SUBCASE("malformed input") {
    CHECK_THROWS_AS(library_from_json("{"), ValidationError);
    CHECK_THROWS_AS(library_from_json("{\"format\": \"other\"}"), ValidationError);
    auto lib = random_library(2, 2, 1, gen);
    auto text = library_to_json(lib);
    const auto pos = text.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"version\": 9");
    CHECK_THROWS_AS(library_from_json(text), ValidationError);
  }
}

TEST_CASE("doubles round trip through text") {
  std::mt19937_64 gen(55);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 10000; ++i) {
    const double x = u(gen) * std::pow(10.0, static_cast<int>(gen() % 40) - 20);
    REQUIRE(parse_double(format_double(x)) == x);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(parse_double("+2.5") == 2.5);
  CHECK_THROWS_AS(parse_double("2.5x"), ValidationError);
  CHECK_THROWS_AS(parse_double(""), ValidationError);
}

TEST_CASE("FNV-1a reference values") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}
