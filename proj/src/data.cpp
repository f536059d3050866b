#include "airpcm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <set>

#include "airpcm/csv.hpp"
#include "airpcm/error.hpp"

namespace airpcm {

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void impute_series(double* v, std::size_t steps, std::size_t train_steps,
                   const std::string& station, const std::string& channel, LoadReport& report) {
  std::vector<double> observed_train, observed_all;
  for (std::size_t t = 0; t < steps; ++t) {
    if (std::isnan(v[t])) continue;
    observed_all.push_back(v[t]);
    if (t < train_steps) observed_train.push_back(v[t]);
  }
  if (observed_all.empty()) {
    throw DataError("station '" + station + "' has no observed values for " + channel);
  }
  const double median = median_of(observed_train.empty() ? observed_all : observed_train);
  std::size_t t = 0;
  while (t < steps) {
    if (!std::isnan(v[t])) {
      ++t;
      continue;
    }
    const std::size_t a = t;
    while (t < steps && std::isnan(v[t])) ++t;
    const std::size_t b = t;  // gap is [a, b)
    const std::size_t len = b - a;
    ImputationEntry entry{station, channel, a, len, ImputeMethod::kMedianFilled};
    if (len <= kMaxInterpolatedGap && a > 0 && b < steps) {
      const double lo = v[a - 1];
      const double hi = v[b];
      for (std::size_t i = a; i < b; ++i) {
        const double w = static_cast<double>(i - a + 1) / static_cast<double>(len + 1);
        v[i] = lo + w * (hi - lo);
      }
      entry.method = ImputeMethod::kInterpolated;
      report.interpolated += len;
    } else if (len <= kMaxInterpolatedGap) {
      const double edge = a > 0 ? v[a - 1] : v[b];
      for (std::size_t i = a; i < b; ++i) v[i] = edge;
      entry.method = ImputeMethod::kEdgeFilled;
      report.edge_filled += len;
    } else {
      for (std::size_t i = a; i < b; ++i) v[i] = median;
      report.median_filled += len;
    }
    report.entries.push_back(std::move(entry));
  }
}

void check_cube(const SeriesCube& c, std::size_t n, std::size_t ch, std::size_t t,
                const std::string& what) {
  if (c.stations != n || c.channels != ch || c.steps != t || c.values.size() != n * ch * t) {
    throw ShapeError(what + " cube does not match the table dimensions");
  }
}

}  // namespace

SeriesCube SeriesCube::segment(std::size_t start, std::size_t length) const {
  if (start + length > steps) throw ShapeError("segment exceeds series length");
  SeriesCube out(stations, channels, length);
  for (std::size_t n = 0; n < stations; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = values.data() + (n * channels + c) * steps + start;
      std::copy(src, src + length, out.values.data() + (n * channels + c) * length);
    }
  }
  return out;
}

ObservationTable ObservationTable::segment(std::size_t start, std::size_t length) const {
  ObservationTable out;
  out.stations = stations;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(start),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(start + length));
  out.dt_hours = dt_hours;
  out.origin = origin + start;
  out.pollutants = pollutants.segment(start, length);
  out.meteorology = meteorology.segment(start, length);
  out.pollutant_names = pollutant_names;
  out.met_names = met_names;
  return out;
}

void ObservationTable::validate() const {
  const std::size_t n = stations.size();
  const std::size_t t = steps();
  check_cube(pollutants, n, pollutant_names.size(), t, "pollutant");
  check_cube(meteorology, n, met_names.size(), t, "meteorology");
  for (std::size_t i = 1; i < t; ++i) {
    if (timestamps[i] - timestamps[i - 1] != hours_to_seconds(dt_hours)) {
      throw DataError("timestamps are not equally spaced at " + format_iso8601(timestamps[i]));
    }
  }
  for (double v : pollutants.values) {
    if (!std::isfinite(v)) throw DataError("non-finite pollutant value in table");
  }
  for (double v : meteorology.values) {
    if (!std::isfinite(v)) throw DataError("non-finite meteorology value in table");
  }
}

ObservationTable load_observations(const std::string& stations_path,
                                   const std::string& observations_path) {
  ObservationTable table;
  table.stations = read_stations_csv(stations_path);
  std::map<std::string, std::size_t> station_index;
  for (std::size_t i = 0; i < table.stations.size(); ++i) {
    if (!station_index.emplace(table.stations[i].id, i).second) {
      throw DataError("duplicate station id: " + table.stations[i].id);
    }
  }
  if (table.stations.empty()) throw DataError(stations_path + ": no stations");

  const CsvTable csv = read_csv(observations_path);
  if (csv.header.size() < 3 || csv.header[0] != "station_id" || csv.header[1] != "timestamp") {
    throw DataError(observations_path + ": header must start with station_id,timestamp");
  }
  // Column -> (is_pollutant, channel index).
  std::vector<std::pair<bool, std::size_t>> column_role;
  for (std::size_t c = 2; c < csv.header.size(); ++c) {
    const std::string& name = csv.header[c];
    const bool pol = std::find(kPollutantColumns.begin(), kPollutantColumns.end(), name) !=
                     kPollutantColumns.end();
    const bool met = std::find(kMeteorologyColumns.begin(), kMeteorologyColumns.end(), name) !=
                     kMeteorologyColumns.end();
    if (!pol && !met) throw DataError(observations_path + ": unknown column '" + name + "'");
    auto& names = pol ? table.pollutant_names : table.met_names;
    if (std::find(names.begin(), names.end(), name) != names.end()) {
      throw DataError(observations_path + ": duplicate column '" + name + "'");
    }
    column_role.emplace_back(pol, names.size());
    names.push_back(name);
  }
  if (table.pollutant_names.empty() || table.met_names.empty()) {
    throw DataError(observations_path + ": need at least one pollutant and one meteorology column");
  }

  struct Row {
    std::size_t station;
    UnixSeconds time;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::set<UnixSeconds> unique_times;
  std::vector<UnixSeconds> last_time(table.stations.size(), std::numeric_limits<UnixSeconds>::min());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = observations_path + " line " + std::to_string(r + 2);
    auto it = station_index.find(row[0]);
    if (it == station_index.end()) throw DataError(where + ": unknown station '" + row[0] + "'");
    const UnixSeconds ts = parse_iso8601(row[1]);
    if (ts <= last_time[it->second]) {
      throw DataError(where + ": timestamps for station '" + row[0] +
                      "' are not strictly increasing");
    }
    last_time[it->second] = ts;
    rows.push_back({it->second, ts, r});
    unique_times.insert(ts);
  }
  if (unique_times.size() < 2) throw DataError(observations_path + ": need at least two timestamps");
  table.timestamps.assign(unique_times.begin(), unique_times.end());
  const UnixSeconds step = table.timestamps[1] - table.timestamps[0];
  for (std::size_t i = 1; i < table.timestamps.size(); ++i) {
    if (table.timestamps[i] - table.timestamps[i - 1] != step) {
      throw DataError(observations_path + ": irregular time step at " +
                      format_iso8601(table.timestamps[i]));
    }
  }
  table.dt_hours = static_cast<double>(step) / 3600.0;

  const std::size_t n = table.stations.size();
  const std::size_t t_len = table.timestamps.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  table.pollutants = SeriesCube(n, table.pollutant_names.size(), t_len, nan);
  table.meteorology = SeriesCube(n, table.met_names.size(), t_len, nan);
  std::vector<bool> present(n * t_len, false);
  for (const Row& row : rows) {
    const auto t = static_cast<std::size_t>((row.time - table.timestamps[0]) / step);
    present[row.station * t_len + t] = true;
    const auto& fields = csv.rows[row.line];
    const std::string where = observations_path + " line " + std::to_string(row.line + 2);
    for (std::size_t c = 0; c < column_role.size(); ++c) {
      const std::string& text = fields[c + 2];
      if (text.empty()) {
        ++table.report.empty_cells;
        continue;
      }
      const double v = parse_double(text, where);
      if (!std::isfinite(v)) throw DataError(where + ": non-finite value");
      auto& cube = column_role[c].first ? table.pollutants : table.meteorology;
      cube(row.station, column_role[c].second, t) = v;
    }
  }
  for (bool p : present) {
    if (!p) table.report.missing_row_cells += column_role.size();
  }

  const std::size_t train_steps = t_len * 2 / 4;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < table.pollutant_names.size(); ++k) {
      impute_series(&table.pollutants(s, k, 0), t_len, train_steps, table.stations[s].id,
                    table.pollutant_names[k], table.report);
    }
    for (std::size_t c = 0; c < table.met_names.size(); ++c) {
      impute_series(&table.meteorology(s, c, 0), t_len, train_steps, table.stations[s].id,
                    table.met_names[c], table.report);
    }
  }
  table.validate();
  return table;
}

void write_observations_csv(const std::string& path, const ObservationTable& table) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "station_id,timestamp";
  for (const auto& name : table.pollutant_names) os << ',' << name;
  for (const auto& name : table.met_names) os << ',' << name;
  os << '\n';
  for (std::size_t n = 0; n < table.stations.size(); ++n) {
    for (std::size_t t = 0; t < table.steps(); ++t) {
      os << table.stations[n].id << ',' << format_iso8601(table.timestamps[t]);
      for (std::size_t k = 0; k < table.pollutant_names.size(); ++k) {
        os << ',' << format_double(table.pollutants(n, k, t));
      }
      for (std::size_t c = 0; c < table.met_names.size(); ++c) {
        os << ',' << format_double(table.meteorology(n, c, t));
      }
      os << '\n';
    }
  }
}

SplitTables chronological_split(const ObservationTable& table, std::size_t tau, std::size_t kappa,
                                std::array<std::size_t, 3> ratio) {
  const std::size_t t_len = table.steps();
  if (t_len < 4 * (tau + kappa)) {
    throw DataError("table has " + std::to_string(t_len) + " steps; splitting needs at least " +
                    std::to_string(4 * (tau + kappa)) + " (4 x (tau + kappa))");
  }
  const std::size_t total = ratio[0] + ratio[1] + ratio[2];
  const std::size_t n_train = t_len * ratio[0] / total;
  const std::size_t n_val = t_len * ratio[1] / total;
  const std::size_t n_test = t_len - n_train - n_val;
  return {table.segment(0, n_train), table.segment(n_train, n_val),
          table.segment(n_train + n_val, n_test)};
}

ObservationTable encode_wind_direction(const ObservationTable& table) {
  auto it = std::find(table.met_names.begin(), table.met_names.end(), kWindDirection);
  if (it == table.met_names.end()) return table;
  const auto wd = static_cast<std::size_t>(it - table.met_names.begin());
  ObservationTable out = table;
  out.met_names.clear();
  for (std::size_t c = 0; c < table.met_names.size(); ++c) {
    if (c == wd) {
      out.met_names.push_back(kWindDirectionSin);
      out.met_names.push_back(kWindDirectionCos);
    } else {
      out.met_names.push_back(table.met_names[c]);
    }
  }
  const std::size_t n = table.stations.size();
  const std::size_t t_len = table.steps();
  out.meteorology = SeriesCube(n, out.met_names.size(), t_len);
  constexpr double rad = std::numbers::pi / 180.0;
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t dst = 0;
    for (std::size_t c = 0; c < table.met_names.size(); ++c) {
      for (std::size_t t = 0; t < t_len; ++t) {
        const double v = table.meteorology(s, c, t);
        if (c == wd) {
          out.meteorology(s, dst, t) = std::sin(v * rad);
          out.meteorology(s, dst + 1, t) = std::cos(v * rad);
        } else {
          out.meteorology(s, dst, t) = v;
        }
      }
      dst += c == wd ? 2 : 1;
    }
  }
  return out;
}

namespace {

void fit_channels(const SeriesCube& cube, const std::vector<std::string>& names,
                  std::vector<double>& mean, std::vector<double>& stdev) {
  mean.assign(cube.channels, 0.0);
  stdev.assign(cube.channels, 0.0);
  const double count = static_cast<double>(cube.stations * cube.steps);
  for (std::size_t c = 0; c < cube.channels; ++c) {
    double m = 0.0;
    for (std::size_t n = 0; n < cube.stations; ++n) {
      for (std::size_t t = 0; t < cube.steps; ++t) m += cube(n, c, t);
    }
    m /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < cube.stations; ++n) {
      for (std::size_t t = 0; t < cube.steps; ++t) var += (cube(n, c, t) - m) * (cube(n, c, t) - m);
    }
    const double sd = std::sqrt(var / count);
    if (!(sd > 1e-12 * std::max(1.0, std::fabs(m)))) {
      throw DataError("channel '" + names[c] + "' has zero variance on the training split");
    }
    mean[c] = m;
    stdev[c] = sd;
  }
}

SeriesCube transform(const SeriesCube& cube, const std::vector<double>& mean,
                     const std::vector<double>& stdev, bool inverse) {
  if (mean.size() != cube.channels) throw ShapeError("normalizer channel count mismatch");
  SeriesCube out = cube;
  for (std::size_t n = 0; n < cube.stations; ++n) {
    for (std::size_t c = 0; c < cube.channels; ++c) {
      for (std::size_t t = 0; t < cube.steps; ++t) {
        double& v = out(n, c, t);
        v = inverse ? v * stdev[c] + mean[c] : (v - mean[c]) / stdev[c];
      }
    }
  }
  return out;
}

}  // namespace

NormStats fit_normalizer(const ObservationTable& train) {
  if (train.steps() == 0) throw DataError("cannot fit a normalizer on an empty table");
  NormStats s;
  fit_channels(train.pollutants, train.pollutant_names, s.pollutant_mean, s.pollutant_std);
  fit_channels(train.meteorology, train.met_names, s.met_mean, s.met_std);
  return s;
}

ObservationTable NormStats::apply(const ObservationTable& table) const {
  ObservationTable out = table;
  out.pollutants = transform(table.pollutants, pollutant_mean, pollutant_std, false);
  out.meteorology = transform(table.meteorology, met_mean, met_std, false);
  return out;
}

ObservationTable NormStats::invert(const ObservationTable& table) const {
  ObservationTable out = table;
  out.pollutants = transform(table.pollutants, pollutant_mean, pollutant_std, true);
  out.meteorology = transform(table.meteorology, met_mean, met_std, true);
  return out;
}

NormalizedSplits fit_apply_normalizer(const ObservationTable& train,
                                      const std::vector<ObservationTable>& others) {
  NormalizedSplits out;
  out.stats = fit_normalizer(train);
  out.train = out.stats.apply(train);
  for (const auto& t : others) out.others.push_back(out.stats.apply(t));
  return out;
}

std::vector<WindowSample> make_windows(const ObservationTable& table, std::size_t tau,
                                       std::size_t kappa, std::size_t stride) {
  if (tau == 0 || kappa == 0 || stride == 0) {
    throw DataError("tau, kappa and the window stride must be positive");
  }
  if (table.steps() < tau + kappa) {
    throw DataError("window of " + std::to_string(tau) + " + " + std::to_string(kappa) +
                    " steps is longer than the table (" + std::to_string(table.steps()) +
                    " steps)");
  }
  std::vector<WindowSample> out;
  out.reserve(window_count(table.steps(), tau, kappa, stride));
  for (std::size_t s = 0; s + tau + kappa <= table.steps(); s += stride) {
    WindowSample w;
    w.past_pollutants = table.pollutants.segment(s, tau);
    w.past_meteorology = table.meteorology.segment(s, tau);
    w.future_pollutants = table.pollutants.segment(s + tau, kappa);
    w.start_index = table.origin + s;
    w.start_time = table.timestamps[s];
    w.dt_hours = table.dt_hours;
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace airpcm
