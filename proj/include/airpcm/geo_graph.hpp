#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace airpcm {

inline constexpr double kEarthRadiusKm = 6371.0;

struct Station {
  std::string id;
  double latitude = 0.0;   // degrees, [-90, 90]
  double longitude = 0.0;  // degrees, [-180, 180]
  double altitude = 0.0;   // meters
};

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double distance_km = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed k-nearest-neighbour graph over stations. Edges are sorted by
/// (src, dst) and carry no self-loops.
struct StationGraph {
  std::vector<Station> stations;
  std::vector<Edge> edges;
  std::size_t k = 0;

  std::size_t size() const { return stations.size(); }
  std::size_t out_degree(std::size_t node) const;
  std::vector<std::size_t> neighbors(std::size_t node) const;
  // Row-major N x N 0/1 matrix: adj[i][j] = 1 when i aggregates from j.
  // Includes the diagonal; `symmetric` adds the reverse of every edge.
  std::vector<double> adjacency(bool symmetric) const;
};

void validate_station(const Station& s);

// Great-circle distance; altitude is ignored.
double haversine_km(const Station& a, const Station& b);

// Each station links to its min(k, N - 1) nearest neighbours, ties broken by
// the smaller station index.
StationGraph build_station_graph(std::vector<Station> stations, std::size_t k);

// stations.csv: station_id,latitude,longitude,altitude
std::vector<Station> read_stations_csv(const std::string& path);
void write_stations_csv(const std::string& path, const std::vector<Station>& stations);

}  // namespace airpcm
