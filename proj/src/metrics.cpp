#include "airpcm/metrics.hpp"

#include <cmath>

#include "airpcm/error.hpp"

namespace airpcm {
namespace {

struct Accumulator {
  double abs = 0.0, sq = 0.0, sym = 0.0;
  std::size_t count = 0;

  void add(double p, double t) {
    const double e = p - t;
    abs += std::fabs(e);
    sq += e * e;
    const double denom = std::fabs(p) + std::fabs(t);
    if (denom > 0.0) sym += 2.0 * std::fabs(e) / denom;
    ++count;
  }
  ErrorSummary summary() const {
    if (count == 0) return {};
    const auto n = static_cast<double>(count);
    return {abs / n, std::sqrt(sq / n), sym / n, count};
  }
};

}  // namespace

nlohmann::json ErrorSummary::to_json() const {
  return {{"mae", mae}, {"rmse", rmse}, {"smape", smape}, {"smape_percent", smape_percent()},
          {"count", count}};
}

ErrorSummary error_summary(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("error_summary size mismatch: " + std::to_string(predicted.size()) + " vs " +
                     std::to_string(truth.size()));
  }
  Accumulator acc;
  for (std::size_t i = 0; i < predicted.size(); ++i) acc.add(predicted[i], truth[i]);
  return acc.summary();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per = nlohmann::json::object(), sudden = nlohmann::json::object();
  for (std::size_t k = 0; k < pollutants.size(); ++k) {
    per[pollutants[k]] = per_pollutant[k].to_json();
    sudden[pollutants[k]] = sudden_per_pollutant[k].to_json();
  }
  return {{"overall", overall.to_json()},
          {"per_pollutant", per},
          {"sudden_change", {{"overall", sudden_overall.to_json()}, {"per_pollutant", sudden}}},
          {"horizon_mae", horizon_mae},
          {"window_count", windows},
          {"sudden_change_count", sudden_count},
          {"smape_zero_convention", "term is 0 when prediction and truth are both 0"}};
}

MetricsReport evaluate_metrics(const Tensor& predicted, const Tensor& truth,
                               const std::vector<bool>& sudden_flags,
                               const std::vector<std::string>& pollutant_names) {
  if (predicted.shape() != truth.shape() || predicted.rank() != 4) {
    throw ShapeError("evaluate_metrics expects equal W x N x K x kappa shapes, got " +
                     to_string(predicted.shape()) + " and " + to_string(truth.shape()));
  }
  const auto& s = predicted.shape();
  const std::size_t w = s[0], n = s[1], k = s[2], h = s[3];
  if (pollutant_names.size() != k) throw ShapeError("pollutant label count does not match K");
  if (!sudden_flags.empty() && sudden_flags.size() != w * n * h) {
    throw ShapeError("sudden-change flags must hold W x N x kappa entries");
  }
  std::vector<Accumulator> per(k), sudden(k), horizon(h);
  Accumulator all, sudden_all;
  std::size_t flagged = 0;
  const auto p = predicted.data();
  const auto t = truth.data();
  for (std::size_t ww = 0; ww < w; ++ww) {
    for (std::size_t nn = 0; nn < n; ++nn) {
      for (std::size_t step = 0; step < h; ++step) {
        const bool flag = !sudden_flags.empty() && sudden_flags[(ww * n + nn) * h + step];
        flagged += flag;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::size_t i = ((ww * n + nn) * k + kk) * h + step;
          per[kk].add(p[i], t[i]);
          all.add(p[i], t[i]);
          horizon[step].add(p[i], t[i]);
          if (flag) {
            sudden[kk].add(p[i], t[i]);
            sudden_all.add(p[i], t[i]);
          }
        }
      }
    }
  }
  MetricsReport r;
  r.pollutants = pollutant_names;
  for (std::size_t kk = 0; kk < k; ++kk) {
    r.per_pollutant.push_back(per[kk].summary());
    r.sudden_per_pollutant.push_back(sudden[kk].summary());
  }
  r.overall = all.summary();
  r.sudden_overall = sudden_all.summary();
  for (const auto& a : horizon) r.horizon_mae.push_back(a.summary().mae);
  r.windows = w;
  r.sudden_count = flagged;
  return r;
}

std::size_t sudden_horizon_steps(double dt_hours) {
  if (!(dt_hours > 0.0)) throw DataError("sudden-change detection needs a positive step");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(3.0 / dt_hours)));
}

std::vector<bool> detect_sudden_changes(std::span<const double> series, double dt_hours, double level,
                                        double jump) {
  if (series.empty()) throw DataError("sudden-change detection needs a non-empty series");
  const std::size_t h3 = sudden_horizon_steps(dt_hours);
  std::vector<bool> flags(series.size(), false);
  for (std::size_t t = 0; t + h3 < series.size(); ++t) {
    if (!(series[t] > level)) continue;
    for (std::size_t d = 1; d <= h3; ++d) {
      if (std::fabs(series[t + d] - series[t]) > jump) {
        flags[t] = true;
        break;
      }
    }
  }
  return flags;
}

}  // namespace airpcm
