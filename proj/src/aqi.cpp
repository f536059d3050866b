#include "airpcm/aqi.hpp"

#include <airpcm/aqi_table.hpp>

#include <sstream>

#include "airpcm/csv.hpp"
#include "airpcm/digest.hpp"
#include "airpcm/error.hpp"

namespace airpcm {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

constexpr double kTopIndex = 500.0;

}  // namespace

const BreakpointRow& AqiTable::row(const std::string& pollutant, const std::string& averaging) const {
  for (const auto& r : rows) {
    if (r.pollutant == pollutant && r.averaging == averaging) return r;
  }
  throw DataError("no AQI breakpoints for " + pollutant + " (" + averaging + ")");
}

AqiTable parse_aqi_table(const std::string& csv_text) {
  AqiTable t;
  std::istringstream in(csv_text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    const auto cells = split(line);
    if (cells.size() < 4) throw DataError("AQI table row too short: " + line);
    std::vector<double> values;
    for (std::size_t i = 3; i < cells.size() && !cells[i].empty(); ++i) {
      values.push_back(parse_double(cells[i], "AQI table"));
    }
    if (cells[0] == "iaqi") {
      t.iaqi = values;
    } else {
      t.rows.push_back({cells[0], cells[1], cells[2], values});
    }
  }
  for (const auto& r : t.rows) {
    if (r.concentration.size() < 2 || r.concentration.size() > t.iaqi.size()) {
      throw DataError("AQI table row for " + r.pollutant + " has a bad breakpoint count");
    }
    for (std::size_t i = 1; i < r.concentration.size(); ++i) {
      if (!(r.concentration[i] > r.concentration[i - 1])) {
        throw DataError("AQI breakpoints for " + r.pollutant + " are not increasing");
      }
    }
  }
  return t;
}

std::string mep2012_table_sha256() { return generated::kAqiTableSha256; }

const AqiTable& mep2012_table() {
  static const AqiTable table = [] {
    if (sha256_hex(std::string(generated::kAqiTableCsv)) != generated::kAqiTableSha256) {
      throw DataError("embedded AQI table does not match its checksum");
    }
    return parse_aqi_table(generated::kAqiTableCsv);
  }();
  return table;
}

double iaqi(const std::string& pollutant, const std::string& averaging, double concentration) {
  if (!(concentration >= 0.0)) {
    throw DataError("negative or invalid " + pollutant + " concentration for AQI");
  }
  const AqiTable& t = mep2012_table();
  const BreakpointRow& r = t.row(pollutant, averaging);
  const auto& bp = r.concentration;
  for (std::size_t i = 1; i < bp.size(); ++i) {
    if (concentration == bp[i]) return t.iaqi[i];
    if (concentration < bp[i]) {
      const double lo = t.iaqi[i - 1], hi = t.iaqi[i];
      return (hi - lo) * (concentration - bp[i - 1]) / (bp[i] - bp[i - 1]) + lo;
    }
  }
  return kTopIndex;
}

AqiCategory aqi_category(double aqi) {
  if (aqi <= 50.0) return AqiCategory::kGood;
  if (aqi <= 100.0) return AqiCategory::kModerate;
  if (aqi <= 150.0) return AqiCategory::kUnhealthySensitive;
  if (aqi <= 200.0) return AqiCategory::kUnhealthy;
  if (aqi <= 300.0) return AqiCategory::kVeryUnhealthy;
  return AqiCategory::kHazardous;
}

std::string category_name(AqiCategory c) {
  switch (c) {
    case AqiCategory::kGood: return "good";
    case AqiCategory::kModerate: return "moderate";
    case AqiCategory::kUnhealthySensitive: return "unhealthy-for-sensitive";
    case AqiCategory::kUnhealthy: return "unhealthy";
    case AqiCategory::kVeryUnhealthy: return "very-unhealthy";
    case AqiCategory::kHazardous: return "hazardous";
  }
  return "unknown";
}

AQIRecord compute_aqi_mep2012(const DailyConcentrations& day) {
  AQIRecord r;
  auto put = [&](const char* name, const std::optional<double>& c) {
    if (c) r.iaqi[name] = iaqi(name, "24h", *c);
  };
  put("pm25", day.pm25);
  put("pm10", day.pm10);
  put("so2", day.so2);
  put("no2", day.no2);
  put("co", day.co);
  if (day.o3_8h) {
    const auto& top = mep2012_table().row("o3", "8h").concentration.back();
    if (*day.o3_8h > top && day.o3_1h) {
      r.iaqi["o3"] = iaqi("o3", "1h", *day.o3_1h);
    } else {
      r.iaqi["o3"] = *day.o3_8h > top ? kTopIndex : iaqi("o3", "8h", *day.o3_8h);
    }
  } else if (day.o3_1h) {
    r.iaqi["o3"] = iaqi("o3", "1h", *day.o3_1h);
  }
  for (const auto& [name, value] : r.iaqi) r.aqi = std::max(r.aqi, value);
  r.category = aqi_category(r.aqi);
  if (r.aqi > 50.0) {
    for (const auto& [name, value] : r.iaqi) {
      if (value == r.aqi) r.primary_pollutants.push_back(name);
    }
  }
  return r;
}

}  // namespace airpcm
