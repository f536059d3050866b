#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace airpcm {

struct BreakpointRow {
  std::string pollutant;  // observations.csv column name
  std::string averaging;  // "24h", "8h" or "1h"
  std::string unit;
  std::vector<double> concentration;  // ascending, one per IAQI level
};

struct AqiTable {
  std::vector<double> iaqi;  // 0, 50, ..., 500
  std::vector<BreakpointRow> rows;

  const BreakpointRow& row(const std::string& pollutant, const std::string& averaging) const;
};

// Breakpoint table compiled in from data/aqi_mep2012.csv; its SHA-256 is
// checked against the recorded digest at configure time and on first use.
const AqiTable& mep2012_table();
std::string mep2012_table_sha256();
AqiTable parse_aqi_table(const std::string& csv_text);

// Piecewise-linear individual index; above the top breakpoint the index is 500.
double iaqi(const std::string& pollutant, const std::string& averaging, double concentration);

/// Daily inputs per station: 24 h means, except O3 (daily maximum 8 h mean
/// and optionally maximum 1 h value). CO in mg/m3, the rest in ug/m3.
struct DailyConcentrations {
  std::optional<double> pm25, pm10, so2, no2, co, o3_8h, o3_1h;
};

enum class AqiCategory { kGood, kModerate, kUnhealthySensitive, kUnhealthy, kVeryUnhealthy, kHazardous };

AqiCategory aqi_category(double aqi);
std::string category_name(AqiCategory c);

struct AQIRecord {
  std::map<std::string, double> iaqi;  // by pollutant column name
  double aqi = 0.0;
  AqiCategory category = AqiCategory::kGood;
  std::vector<std::string> primary_pollutants;  // empty when AQI <= 50
};

// O3 uses the 8 h table; when the 8 h mean exceeds its top breakpoint the
// 1 h value is used if present, otherwise the index clamps to 500.
AQIRecord compute_aqi_mep2012(const DailyConcentrations& day);

}  // namespace airpcm
