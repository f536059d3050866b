#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "airpcm/data.hpp"
#include "airpcm/error.hpp"
#include "airpcm/synthetic.hpp"
#include "airpcm/time_util.hpp"

using namespace airpcm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("airpcm_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" +
            std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

const char* kHeader =
    "station_id,timestamp,pm25,pm10,o3,no2,so2,co,temperature,pressure,humidity,wind_speed,"
    "wind_direction\n";

std::string row(const std::string& id, const std::string& ts, const std::string& pm25) {
  return id + "," + ts + "," + pm25 + ",1,2,3,4,0.5,10,1000,50,2,90\n";
}

ObservationTable ramp_table(std::size_t steps, double slope_pol, double offset) {
  ObservationTable t;
  t.stations = {{"a", 0, 0}, {"b", 1, 1}};
  t.dt_hours = 1.0;
  for (std::size_t i = 0; i < steps; ++i) t.timestamps.push_back(static_cast<UnixSeconds>(i) * 3600);
  t.pollutant_names = {"pm25"};
  t.met_names = {"temperature"};
  t.pollutants = SeriesCube(2, 1, steps);
  t.meteorology = SeriesCube(2, 1, steps);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < steps; ++i) {
      t.pollutants(n, 0, i) = offset + slope_pol * static_cast<double>(i) + static_cast<double>(n);
      t.meteorology(n, 0, i) = std::sin(static_cast<double>(i)) + 3.0 * static_cast<double>(n);
    }
  }
  return t;
}

}  // namespace

TEST_CASE("timestamps round trip") {
  const UnixSeconds t = parse_iso8601("2024-01-17T00:00:00Z");
  CHECK(format_iso8601(t) == "2024-01-17T00:00:00Z");
  CHECK(parse_iso8601("2024-06-01T03:00:00Z") - parse_iso8601("2024-06-01T00:00:00Z") == 3 * 3600);
  CHECK(to_civil(parse_iso8601("2024-02-29T21:00:00Z")).day == 29);
  CHECK_THROWS_AS(parse_iso8601("2024-13-01T00:00:00Z"), DataError);
  CHECK_THROWS_AS(parse_iso8601("yesterday"), DataError);
}

TEST_CASE("load_observations examples") {
  TempDir dir;
  write(dir.file("stations.csv"), "station_id,latitude,longitude,altitude\nA,39.9,116.4,50\nB,31.2,121.5,4\n");

  SUBCASE("complete rows give N x K x T and N x C x T arrays") {
    write(dir.file("obs.csv"), std::string(kHeader) + row("A", "2024-01-17T00:00:00Z", "10") +
                                   row("A", "2024-01-17T01:00:00Z", "11") +
                                   row("B", "2024-01-17T00:00:00Z", "12") +
                                   row("B", "2024-01-17T01:00:00Z", "13"));
    const auto t = load_observations(dir.file("stations.csv"), dir.file("obs.csv"));
    CHECK(t.pollutants.stations == 2);
    CHECK(t.pollutants.channels == 6);
    CHECK(t.pollutants.steps == 2);
    CHECK(t.meteorology.channels == 5);
    CHECK(t.meteorology.steps == 2);
    CHECK(t.dt_hours == 1.0);
    CHECK(t.pollutants(1, 0, 1) == 13.0);
    CHECK(t.report.imputed() == 0);
  }

  SUBCASE("single missing value is linearly interpolated") {
    write(dir.file("obs.csv"), std::string(kHeader) + row("A", "2024-01-17T00:00:00Z", "10") +
                                   row("A", "2024-01-17T01:00:00Z", "") +
                                   row("A", "2024-01-17T02:00:00Z", "20") +
                                   row("B", "2024-01-17T00:00:00Z", "1") +
                                   row("B", "2024-01-17T01:00:00Z", "1") +
                                   row("B", "2024-01-17T02:00:00Z", "1"));
    const auto t = load_observations(dir.file("stations.csv"), dir.file("obs.csv"));
    CHECK(t.pollutants(0, 0, 1) == 15.0);
    CHECK(t.report.empty_cells == 1);
    CHECK(t.report.interpolated == 1);
  }

  SUBCASE("five-step gap is median filled and reported") {
    std::string text = kHeader;
    // PM2.5 at A: 1..3, five blanks, then 9..12. Training period is the
    // first 6 of 12 steps, whose observed values are {1, 2, 3}.
    const char* pm[] = {"1", "2", "3", "", "", "", "", "", "9", "10", "11", "12"};
    for (int i = 0; i < 12; ++i) {
      char ts[32];
      std::snprintf(ts, sizeof(ts), "2024-01-17T%02d:00:00Z", i);
      text += row("A", ts, pm[i]);
    }
    for (int i = 0; i < 12; ++i) {
      char ts[32];
      std::snprintf(ts, sizeof(ts), "2024-01-17T%02d:00:00Z", i);
      text += row("B", ts, "7");
    }
    write(dir.file("obs.csv"), text);
    const auto t = load_observations(dir.file("stations.csv"), dir.file("obs.csv"));
    CHECK(t.report.empty_cells == 5);
    CHECK(t.report.median_filled == 5);
    CHECK(t.report.imputed() == t.report.empty_cells);
    REQUIRE(t.report.entries.size() == 1);
    CHECK(t.report.entries[0].length == 5);
    CHECK(t.report.entries[0].method == ImputeMethod::kMedianFilled);
    for (int i = 3; i < 8; ++i) CHECK(t.pollutants(0, 0, static_cast<std::size_t>(i)) == 2.0);
  }

  SUBCASE("errors") {
    write(dir.file("unknown.csv"), std::string(kHeader) + row("Z", "2024-01-17T00:00:00Z", "1"));
    CHECK_THROWS_AS(load_observations(dir.file("stations.csv"), dir.file("unknown.csv")), DataError);
    write(dir.file("order.csv"), std::string(kHeader) + row("A", "2024-01-17T01:00:00Z", "1") +
                                     row("A", "2024-01-17T00:00:00Z", "1"));
    CHECK_THROWS_AS(load_observations(dir.file("stations.csv"), dir.file("order.csv")), DataError);
    write(dir.file("irregular.csv"), std::string(kHeader) + row("A", "2024-01-17T00:00:00Z", "1") +
                                         row("A", "2024-01-17T01:00:00Z", "1") +
                                         row("A", "2024-01-17T03:00:00Z", "1"));
    CHECK_THROWS_AS(load_observations(dir.file("stations.csv"), dir.file("irregular.csv")),
                    DataError);
  }
}

TEST_CASE("imputed cell count equals empty cells in the file") {
  TempDir dir;
  write(dir.file("stations.csv"), "station_id,latitude,longitude,altitude\nA,39.9,116.4,50\n");
  std::mt19937_64 rng(3);
  std::bernoulli_distribution blank(0.3);
  std::string text = kHeader;
  std::size_t blanks = 0;
  const UnixSeconds t0 = parse_iso8601("2024-01-01T00:00:00Z");
  for (int i = 0; i < 40; ++i) {
    const bool b = i > 0 && blank(rng);
    blanks += b;
    text += row("A", format_iso8601(t0 + i * 86400), b ? "" : std::to_string(i));
  }
  write(dir.file("obs.csv"), text);
  const auto t = load_observations(dir.file("stations.csv"), dir.file("obs.csv"));
  CHECK(t.report.empty_cells == blanks);
  CHECK(t.report.imputed() == blanks);
}

TEST_CASE("chronological_split examples") {
  const auto t400 = ramp_table(400, 1.0, 0.0);
  const auto s = chronological_split(t400, 24, 24);
  CHECK(s.train.steps() == 200);
  CHECK(s.val.steps() == 100);
  CHECK(s.test.steps() == 100);

  const auto s401 = chronological_split(ramp_table(401, 1.0, 0.0), 24, 24);
  CHECK(s401.train.steps() == 200);
  CHECK(s401.val.steps() == 100);
  CHECK(s401.test.steps() == 101);
  CHECK(s401.train.timestamps.back() < s401.val.timestamps.front());
  CHECK(s401.val.timestamps.back() < s401.test.timestamps.front());
  CHECK(s401.test.origin == 300);

  CHECK_THROWS_AS(chronological_split(ramp_table(4 * 48 - 1, 1.0, 0.0), 24, 24), DataError);
  CHECK_NOTHROW(chronological_split(ramp_table(4 * 48, 1.0, 0.0), 24, 24));
}

TEST_CASE("fit_apply_normalizer examples") {
  const auto table = ramp_table(400, 0.5, 100.0);
  const auto split = chronological_split(table, 24, 24);
  const auto norm = fit_apply_normalizer(split.train, {split.val, split.test});

  double mu = 0.0, var = 0.0;
  const auto& v = norm.train.pollutants.values;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  CHECK(std::fabs(mu) < 1e-12);
  CHECK(std::fabs(var - 1.0) < 1e-12);

  // The ramp keeps rising, so validation sits above the training mean.
  double val_mu = 0.0;
  for (double x : norm.others[0].pollutants.values) val_mu += x;
  val_mu /= static_cast<double>(norm.others[0].pollutants.values.size());
  CHECK(val_mu > 1.0);

  const auto back = norm.stats.invert(norm.others[1]);
  double worst = 0.0;
  for (std::size_t i = 0; i < back.pollutants.values.size(); ++i) {
    worst = std::max(worst, std::fabs(back.pollutants.values[i] - split.test.pollutants.values[i]));
  }
  for (std::size_t i = 0; i < back.meteorology.values.size(); ++i) {
    worst = std::max(worst,
                     std::fabs(back.meteorology.values[i] - split.test.meteorology.values[i]));
  }
  CHECK(worst < 1e-9);

  auto flat = table;
  for (auto& x : flat.meteorology.values) x = 5.0;
  CHECK_THROWS_AS(fit_normalizer(flat), DataError);
}

TEST_CASE("make_windows examples") {
  CHECK(make_windows(ramp_table(48, 1, 0), 24, 24, 1).size() == 1);
  CHECK(make_windows(ramp_table(50, 1, 0), 24, 24, 1).size() == 3);
  CHECK_THROWS_AS(make_windows(ramp_table(47, 1, 0), 24, 24, 1), DataError);

  const auto t = ramp_table(120, 1.0, 0.0);
  for (std::size_t stride : {1u, 5u, 48u}) {
    const auto w = make_windows(t, 24, 24, stride);
    CHECK(w.size() == window_count(120, 24, 24, stride));
    for (const auto& s : w) {
      // Ramp slope 1: the future block starts one step after the past block.
      CHECK(s.future_pollutants(0, 0, 0) - s.past_pollutants(0, 0, 23) == 1.0);
      CHECK(s.past_pollutants(0, 0, 0) == static_cast<double>(s.start_index));
    }
  }
}

TEST_CASE("encode_wind_direction expands C by one") {
  auto t = ramp_table(10, 1.0, 0.0);
  t.met_names = {"wind_direction"};
  for (std::size_t i = 0; i < 10; ++i) t.meteorology(0, 0, i) = 90.0;
  const auto e = encode_wind_direction(t);
  CHECK(e.met_names == std::vector<std::string>{kWindDirectionSin, kWindDirectionCos});
  CHECK(e.meteorology(0, 0, 0) == doctest::Approx(1.0));
  CHECK(std::fabs(e.meteorology(0, 1, 0)) < 1e-12);
}

TEST_CASE("generate_synthetic examples") {
  SyntheticSpec spec;
  spec.stations = 3;
  spec.pollutants = 1;
  spec.meteorology = 2;
  spec.steps = 200;
  spec.lag_table = {{0, 3}};
  spec.coeff_table = {{0.0, 1.0}};
  spec.spatial_coupling = 0.0;
  spec.noise_std = 0.0;
  spec.seed = 42;
  const auto graph = build_station_graph(random_stations(3, 1), 2);

  const auto a = generate_synthetic(spec, graph);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t t = 3; t < 200; ++t) {
      CHECK(a.pollutants(n, 0, t) == a.meteorology(n, 1, t - 3));
    }
  }
  const auto b = generate_synthetic(spec, graph);
  CHECK(a.pollutants.values == b.pollutants.values);
  CHECK(a.meteorology.values == b.meteorology.values);

  spec.lag_table = {{0, 24}};
  CHECK_THROWS_AS(generate_synthetic(spec, graph), DataError);
}

TEST_CASE("spatial coupling propagates an impulse one step later at half amplitude") {
  const auto g = build_station_graph({{"a", 0, 0}, {"b", 0, 1}}, 1);
  SeriesCube drive(2, 1, 10);
  drive(0, 0, 4) = 1.0;
  const auto x = propagate_pollutants(drive, g, 0.5);
  CHECK(x(1, 0, 4) == 0.0);
  CHECK(x(1, 0, 5) == 0.5);
  CHECK(x(0, 0, 6) == 0.25);  // echoes back through the mutual edge
}
