#include "airpcm/geo_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "airpcm/csv.hpp"
#include "airpcm/error.hpp"

namespace airpcm {

void validate_station(const Station& s) {
  if (!(s.latitude >= -90.0 && s.latitude <= 90.0) ||
      !(s.longitude >= -180.0 && s.longitude <= 180.0)) {
    throw DataError("station '" + s.id + "' has out-of-range coordinates (" +
                    std::to_string(s.latitude) + ", " + std::to_string(s.longitude) + ")");
  }
}

double haversine_km(const Station& a, const Station& b) {
  validate_station(a);
  validate_station(b);
  constexpr double rad = std::numbers::pi / 180.0;
  const double phi1 = a.latitude * rad;
  const double phi2 = b.latitude * rad;
  const double dphi = phi2 - phi1;
  const double dlambda = (b.longitude - a.longitude) * rad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  // sin^2 is even, and cos(phi1) cos(phi2) commutes, so swapping a and b
  // yields the identical sum.
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, h)));
}

std::size_t StationGraph::out_degree(std::size_t node) const {
  return static_cast<std::size_t>(
      std::count_if(edges.begin(), edges.end(), [node](const Edge& e) { return e.src == node; }));
}

std::vector<std::size_t> StationGraph::neighbors(std::size_t node) const {
  std::vector<std::size_t> out;
  for (const auto& e : edges) {
    if (e.src == node) out.push_back(e.dst);
  }
  return out;
}

std::vector<double> StationGraph::adjacency(bool symmetric) const {
  const std::size_t n = size();
  std::vector<double> adj(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) adj[i * n + i] = 1.0;
  for (const auto& e : edges) {
    adj[e.src * n + e.dst] = 1.0;
    if (symmetric) adj[e.dst * n + e.src] = 1.0;
  }
  return adj;
}

StationGraph build_station_graph(std::vector<Station> stations, std::size_t k) {
  if (stations.empty()) throw DataError("station list is empty");
  if (k == 0) throw DataError("neighbour count k must be positive");
  std::set<std::string> ids;
  for (const auto& s : stations) {
    validate_station(s);
    if (!ids.insert(s.id).second) throw DataError("duplicate station id: " + s.id);
  }
  StationGraph g;
  const std::size_t n = stations.size();
  g.k = k;
  const std::size_t degree = std::min(k, n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) cand.emplace_back(haversine_km(stations[i], stations[j]), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(degree), cand.end());
    std::vector<std::size_t> chosen;
    for (std::size_t r = 0; r < degree; ++r) chosen.push_back(cand[r].second);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t j : chosen) {
      g.edges.push_back({i, j, haversine_km(stations[i], stations[j])});
    }
  }
  g.stations = std::move(stations);
  return g;
}

std::vector<Station> read_stations_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const std::vector<std::string> expected{"station_id", "latitude", "longitude", "altitude"};
  if (table.header.size() < 3 || table.header.size() > 4 ||
      !std::equal(table.header.begin(), table.header.end(), expected.begin())) {
    throw DataError(path + ": header must be station_id,latitude,longitude,altitude");
  }
  std::vector<Station> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    Station s;
    s.id = row[0];
    const std::string where = path + " line " + std::to_string(r + 2);
    s.latitude = parse_double(row[1], where);
    s.longitude = parse_double(row[2], where);
    if (row.size() > 3 && !row[3].empty()) s.altitude = parse_double(row[3], where);
    validate_station(s);
    out.push_back(std::move(s));
  }
  return out;
}

void write_stations_csv(const std::string& path, const std::vector<Station>& stations) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "station_id,latitude,longitude,altitude\n";
  for (const auto& s : stations) {
    os << s.id << ',' << format_double(s.latitude) << ',' << format_double(s.longitude) << ','
       << format_double(s.altitude) << '\n';
  }
}

}  // namespace airpcm
