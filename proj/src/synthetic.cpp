#include "airpcm/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "airpcm/error.hpp"

namespace airpcm {

void SyntheticSpec::validate() const {
  if (stations == 0 || pollutants == 0 || meteorology == 0) {
    throw DataError("synthetic spec: N, K and C must be positive");
  }
  if (pollutants > kPollutantColumns.size() || meteorology > kMeteorologyColumns.size()) {
    throw DataError("synthetic spec: at most 6 pollutants and 5 meteorological variables");
  }
  if (steps == 0 || !(dt_hours > 0.0) || window == 0) {
    throw DataError("synthetic spec: T, dt_hours and window must be positive");
  }
  if (lag_table.size() != pollutants || coeff_table.size() != pollutants) {
    throw DataError("synthetic spec: lag_table and coeff_table need K rows");
  }
  for (std::size_t k = 0; k < pollutants; ++k) {
    if (lag_table[k].size() != meteorology || coeff_table[k].size() != meteorology) {
      throw DataError("synthetic spec: lag_table and coeff_table rows need C entries");
    }
    for (int lag : lag_table[k]) {
      if (lag < 0 || static_cast<std::size_t>(lag) >= window) {
        throw DataError("synthetic spec: lag " + std::to_string(lag) +
                        " exceeds the causal window [0, " + std::to_string(window) + ")");
      }
    }
  }
  if (!(spatial_coupling >= 0.0 && spatial_coupling < 1.0)) {
    throw DataError("synthetic spec: spatial_coupling must lie in [0, 1)");
  }
  if (!(noise_std >= 0.0)) throw DataError("synthetic spec: noise_std must be >= 0");
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.stations = j.value("N", s.stations);
    s.pollutants = j.value("K", s.pollutants);
    s.meteorology = j.value("C", s.meteorology);
    s.steps = j.value("T", s.steps);
    s.dt_hours = j.value("dt_hours", s.dt_hours);
    s.window = j.value("window", s.window);
    s.lag_table = j.at("lag_table").get<std::vector<std::vector<int>>>();
    s.coeff_table = j.at("coeff_table").get<std::vector<std::vector<double>>>();
    s.spatial_coupling = j.value("spatial_coupling", s.spatial_coupling);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = j.value("seed", s.seed);
    s.start = j.value("start", s.start);
    s.k_neighbors = j.value("k_neighbors", s.k_neighbors);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"N", stations},          {"K", pollutants},
          {"C", meteorology},       {"T", steps},
          {"dt_hours", dt_hours},   {"window", window},
          {"lag_table", lag_table}, {"coeff_table", coeff_table},
          {"spatial_coupling", spatial_coupling},
          {"noise_std", noise_std}, {"seed", seed},
          {"start", start},         {"k_neighbors", k_neighbors}};
}

std::vector<Station> random_stations(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::uniform_real_distribution<double> lat(30.0, 42.0);
  std::uniform_real_distribution<double> lon(110.0, 122.0);
  std::uniform_real_distribution<double> alt(0.0, 500.0);
  std::vector<Station> out;
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "S%03zu", i);
    const double la = lat(rng);
    const double lo = lon(rng);
    out.push_back({id, std::round(la * 1e4) / 1e4, std::round(lo * 1e4) / 1e4,
                   std::round(alt(rng))});
  }
  return out;
}

SeriesCube propagate_pollutants(const SeriesCube& drive, const StationGraph& graph, double beta) {
  if (graph.size() != drive.stations) throw ShapeError("graph size does not match station count");
  std::vector<std::vector<std::size_t>> nbrs(graph.size());
  for (std::size_t n = 0; n < graph.size(); ++n) nbrs[n] = graph.neighbors(n);
  SeriesCube x = drive;
  if (beta == 0.0) return x;
  for (std::size_t t = 1; t < drive.steps; ++t) {
    for (std::size_t n = 0; n < drive.stations; ++n) {
      if (nbrs[n].empty()) continue;
      for (std::size_t c = 0; c < drive.channels; ++c) {
        double acc = 0.0;
        for (std::size_t j : nbrs[n]) acc += x(j, c, t - 1);
        x(n, c, t) += beta * acc / static_cast<double>(nbrs[n].size());
      }
    }
  }
  return x;
}

SeriesCube synthetic_meteorology(std::size_t stations, std::size_t channels, std::size_t steps,
                                 double dt_hours, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> slow_days(3.0, 7.0);
  std::normal_distribution<double> innovation(0.0, 0.3);
  constexpr double kAr = 0.8;
  const double daily = 24.0 / dt_hours;
  SeriesCube m(stations, channels, steps);
  for (std::size_t c = 0; c < channels; ++c) {
    const double slow = slow_days(rng) * 24.0 / dt_hours;
    for (std::size_t n = 0; n < stations; ++n) {
      const double p1 = phase(rng);
      const double p2 = phase(rng);
      double ar = 0.0;
      for (std::size_t t = 0; t < steps; ++t) {
        ar = kAr * ar + innovation(rng);
        const double tt = static_cast<double>(t);
        m(n, c, t) = std::sin(2.0 * std::numbers::pi * tt / daily + p1) +
                     0.5 * std::sin(2.0 * std::numbers::pi * tt / slow + p2) + ar;
      }
    }
  }
  return m;
}

ObservationTable generate_synthetic(const SyntheticSpec& spec, const StationGraph& graph) {
  spec.validate();
  if (graph.size() != spec.stations) {
    throw DataError("synthetic spec has N=" + std::to_string(spec.stations) +
                    " but the graph has " + std::to_string(graph.size()) + " stations");
  }
  const std::size_t n_st = spec.stations;
  const std::size_t total = spec.steps + spec.window;
  const SeriesCube met =
      synthetic_meteorology(n_st, spec.meteorology, total, spec.dt_hours, spec.seed);

  SeriesCube drive(n_st, spec.pollutants, total);
  std::mt19937_64 noise_rng(spec.seed * 0x9E3779B97F4A7C15ULL + 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t n = 0; n < n_st; ++n) {
    for (std::size_t k = 0; k < spec.pollutants; ++k) {
      for (std::size_t t = 0; t < total; ++t) {
        double v = 0.0;
        for (std::size_t c = 0; c < spec.meteorology; ++c) {
          const auto lag = static_cast<std::size_t>(spec.lag_table[k][c]);
          const double alpha = spec.coeff_table[k][c];
          if (alpha != 0.0) v += alpha * met(n, c, t >= lag ? t - lag : 0);
        }
        if (spec.noise_std > 0.0) v += spec.noise_std * noise(noise_rng);
        drive(n, k, t) = v;
      }
    }
  }
  const SeriesCube pol = propagate_pollutants(drive, graph, spec.spatial_coupling);

  ObservationTable table;
  table.stations = graph.stations;
  table.dt_hours = spec.dt_hours;
  const UnixSeconds start = parse_iso8601(spec.start);
  for (std::size_t t = 0; t < spec.steps; ++t) {
    table.timestamps.push_back(start + static_cast<UnixSeconds>(t) * hours_to_seconds(spec.dt_hours));
  }
  table.pollutants = pol.segment(spec.window, spec.steps);
  table.meteorology = met.segment(spec.window, spec.steps);
  table.pollutant_names.assign(kPollutantColumns.begin(),
                               kPollutantColumns.begin() + static_cast<std::ptrdiff_t>(spec.pollutants));
  table.met_names.assign(kMeteorologyColumns.begin(),
                         kMeteorologyColumns.begin() + static_cast<std::ptrdiff_t>(spec.meteorology));
  table.validate();
  return table;
}

}  // namespace airpcm
