#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "airpcm/geo_graph.hpp"
#include "airpcm/time_util.hpp"

namespace airpcm {

// Column names of observations.csv, in canonical order.
inline const std::vector<std::string> kPollutantColumns{"pm25", "pm10", "o3", "no2", "so2", "co"};
inline const std::vector<std::string> kMeteorologyColumns{"temperature", "pressure", "humidity",
                                                          "wind_speed", "wind_direction"};
inline const std::string kWindDirection = "wind_direction";
inline const std::string kWindDirectionSin = "wind_direction_sin";
inline const std::string kWindDirectionCos = "wind_direction_cos";

/// stations x channels x steps, row-major.
struct SeriesCube {
  std::size_t stations = 0;
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::vector<double> values;

  SeriesCube() = default;
  SeriesCube(std::size_t n, std::size_t c, std::size_t t, double fill = 0.0)
      : stations(n), channels(c), steps(t), values(n * c * t, fill) {}

  double& operator()(std::size_t n, std::size_t c, std::size_t t) {
    return values[(n * channels + c) * steps + t];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t t) const {
    return values[(n * channels + c) * steps + t];
  }
  // Steps [start, start + length) of every series.
  SeriesCube segment(std::size_t start, std::size_t length) const;
};

enum class ImputeMethod { kInterpolated, kEdgeFilled, kMedianFilled };

struct ImputationEntry {
  std::string station_id;
  std::string channel;
  std::size_t start = 0;
  std::size_t length = 0;
  ImputeMethod method = ImputeMethod::kInterpolated;
};

struct LoadReport {
  std::size_t empty_cells = 0;        // blank cells present in the file
  std::size_t missing_row_cells = 0;  // cells of (station, timestamp) rows absent from the file
  std::size_t interpolated = 0;
  std::size_t edge_filled = 0;
  std::size_t median_filled = 0;
  std::vector<ImputationEntry> entries;

  std::size_t imputed() const { return interpolated + edge_filled + median_filled; }
};

struct ObservationTable {
  std::vector<Station> stations;
  std::vector<UnixSeconds> timestamps;
  double dt_hours = 1.0;
  std::size_t origin = 0;  // index of timestamps[0] in the source timeline
  SeriesCube pollutants;   // N x K x T
  SeriesCube meteorology;  // N x C x T
  std::vector<std::string> pollutant_names;
  std::vector<std::string> met_names;
  LoadReport report;

  std::size_t steps() const { return timestamps.size(); }
  ObservationTable segment(std::size_t start, std::size_t length) const;
  void validate() const;
};

inline constexpr std::size_t kMaxInterpolatedGap = 3;

// Reads stations.csv and observations.csv. Short gaps (<= 3 steps) are
// linearly interpolated, longer ones take the station-channel median over
// the training period (first half of the timeline).
ObservationTable load_observations(const std::string& stations_path,
                                   const std::string& observations_path);
void write_observations_csv(const std::string& path, const ObservationTable& table);

struct SplitTables {
  ObservationTable train, val, test;
};

// Contiguous train/val/test segments with lengths floor(T*r0/R), floor(T*r1/R)
// and the remainder. Requires T >= 4 (tau + kappa).
SplitTables chronological_split(const ObservationTable& table, std::size_t tau, std::size_t kappa,
                                std::array<std::size_t, 3> ratio = {2, 1, 1});

// Replaces the wind direction channel (degrees) by its sine and cosine.
ObservationTable encode_wind_direction(const ObservationTable& table);

/// Per-channel z-score statistics fitted on the training split.
struct NormStats {
  std::vector<double> pollutant_mean, pollutant_std;
  std::vector<double> met_mean, met_std;

  ObservationTable apply(const ObservationTable& table) const;
  ObservationTable invert(const ObservationTable& table) const;
  double denormalize_pollutant(std::size_t k, double z) const {
    return z * pollutant_std[k] + pollutant_mean[k];
  }
};

NormStats fit_normalizer(const ObservationTable& train);

struct NormalizedSplits {
  NormStats stats;
  ObservationTable train;
  std::vector<ObservationTable> others;
};

NormalizedSplits fit_apply_normalizer(const ObservationTable& train,
                                      const std::vector<ObservationTable>& others);

struct WindowSample {
  SeriesCube past_pollutants;   // N x K x tau
  SeriesCube past_meteorology;  // N x C x tau
  SeriesCube future_pollutants; // N x K x kappa
  std::size_t start_index = 0;  // source-timeline index of the first past step
  UnixSeconds start_time = 0;
  double dt_hours = 1.0;
};

// Windows start at 0, stride, 2 stride, ... while start + tau + kappa <= T.
std::vector<WindowSample> make_windows(const ObservationTable& table, std::size_t tau,
                                       std::size_t kappa, std::size_t stride);

inline std::size_t window_count(std::size_t steps, std::size_t tau, std::size_t kappa,
                                std::size_t stride) {
  return steps < tau + kappa ? 0 : (steps - tau - kappa) / stride + 1;
}

}  // namespace airpcm
