#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "airpcm/data.hpp"
#include "airpcm/geo_graph.hpp"

namespace airpcm {

/// Recipe for a synthetic dataset with planted meteorology -> pollutant lags:
///   m_c(t) = sin(2 pi t / P1 + phase) + 0.5 sin(2 pi t / P2 + phase') + AR(1)
///   x_k(t) = sum_c alpha[k][c] m_c(t - lag[k][c])
///            + beta * mean_{j in nbrs} x_k,j(t - 1) + N(0, noise_std)
/// The first `window` generated steps are burn-in and discarded.
struct SyntheticSpec {
  std::size_t stations = 8;
  std::size_t pollutants = 3;
  std::size_t meteorology = 3;
  std::size_t steps = 2000;
  double dt_hours = 3.0;
  std::size_t window = 24;  // causal window; lags must be < window
  std::vector<std::vector<int>> lag_table;       // K x C
  std::vector<std::vector<double>> coeff_table;  // K x C
  double spatial_coupling = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  std::string start = "2024-01-17T00:00:00Z";
  std::size_t k_neighbors = 3;

  void validate() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Seeded random stations inside a mid-latitude box.
std::vector<Station> random_stations(std::size_t count, std::uint64_t seed);

// x(t) = drive(t) + beta * mean over out-neighbours of x(t - 1), per channel.
SeriesCube propagate_pollutants(const SeriesCube& drive, const StationGraph& graph, double beta);

// Raw meteorology of `steps` steps (no burn-in removal).
SeriesCube synthetic_meteorology(std::size_t stations, std::size_t channels, std::size_t steps,
                                 double dt_hours, std::uint64_t seed);

ObservationTable generate_synthetic(const SyntheticSpec& spec, const StationGraph& graph);

}  // namespace airpcm
