#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "airpcm/tensor.hpp"

namespace airpcm {

struct ErrorSummary {
  double mae = 0.0;
  double rmse = 0.0;
  double smape = 0.0;  // ratio form, in [0, 2]
  std::size_t count = 0;

  double smape_percent() const { return 100.0 * smape; }
  nlohmann::json to_json() const;
};

// A SMAPE term is 0 when both prediction and truth are 0.
ErrorSummary error_summary(std::span<const double> predicted, std::span<const double> truth);

struct MetricsReport {
  std::vector<std::string> pollutants;
  std::vector<ErrorSummary> per_pollutant;
  ErrorSummary overall;
  std::vector<ErrorSummary> sudden_per_pollutant;
  ErrorSummary sudden_overall;
  std::vector<double> horizon_mae;  // one entry per forecast step, all pollutants pooled
  std::size_t windows = 0;
  std::size_t sudden_count = 0;  // flagged (window, station, step) triples

  nlohmann::json to_json() const;
};

// predicted, truth: W x N x K x kappa in physical units. sudden_flags holds
// W x N x kappa booleans (or is empty); a flagged (station, step) selects all
// K pollutants at that position.
MetricsReport evaluate_metrics(const Tensor& predicted, const Tensor& truth,
                               const std::vector<bool>& sudden_flags,
                               const std::vector<std::string>& pollutant_names);

inline constexpr double kSuddenLevel = 75.0;  // ug/m3
inline constexpr double kSuddenJump = 20.0;   // ug/m3 within three hours

// Lookahead in steps covering three hours.
std::size_t sudden_horizon_steps(double dt_hours);

// flag[t] iff series[t] > level and some |series[t + d] - series[t]| > jump
// for 1 <= d <= h3. Steps without a full lookahead stay unflagged.
std::vector<bool> detect_sudden_changes(std::span<const double> series, double dt_hours,
                                        double level = kSuddenLevel, double jump = kSuddenJump);

}  // namespace airpcm
