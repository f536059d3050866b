#include <algorithm>
#include <cstdio>
#include <fstream>

#include "airpcm/csv.hpp"
#include "airpcm/error.hpp"
#include "airpcm/model.hpp"

namespace airpcm {

double CausalAttentionMap::mean_lag(std::size_t n, std::size_t k, std::size_t c) const {
  double mass = 0.0, acc = 0.0;
  for (std::size_t j = 0; j < omega; ++j) {
    mass += at(n, k, c, j);
    acc += at(n, k, c, j) * static_cast<double>(omega - 1 - j);
  }
  return mass > 0.0 ? acc / mass : 0.0;
}

double CausalAttentionMap::mean_lag(std::size_t k, std::size_t c) const {
  double mass = 0.0, acc = 0.0;
  for (std::size_t n = 0; n < stations; ++n) {
    for (std::size_t j = 0; j < omega; ++j) {
      mass += at(n, k, c, j);
      acc += at(n, k, c, j) * static_cast<double>(omega - 1 - j);
    }
  }
  return mass > 0.0 ? acc / mass : 0.0;
}

CausalAttentionMap causal_attention_map(const Tensor& attention, const AirPCMConfig& config) {
  const CausalMask mask = build_causal_mask(config);
  const std::size_t np = mask.rows, om = mask.cols;
  const auto& s = attention.shape();
  if (attention.rank() != 5 || s[3] % np != 0 || s[4] % om != 0) {
    throw ShapeError("attention tensor " + to_string(s) + " does not match n_p=" +
                     std::to_string(np) + ", omega=" + std::to_string(om));
  }
  const std::size_t b = s[0], n = s[1], h = s[2], k = s[3] / np, c = s[4] / om;
  CausalAttentionMap map{n, k, c, om, std::vector<double>(n * k * c * om, 0.0)};

  // Rows admitted only through the fallback carry no lag information; they
  // count only when every row is a fallback row.
  const bool all_fallback = std::all_of(mask.fallback.begin(), mask.fallback.end(), [](bool f) { return f; });
  std::size_t rows_used = 0;
  for (std::size_t i = 0; i < np; ++i) rows_used += all_fallback || !mask.fallback[i];
  const double norm = 1.0 / static_cast<double>(b * h * rows_used);
  const std::size_t offset = config.tau - om;
  const auto a = attention.data();

  for (std::size_t bb = 0; bb < b; ++bb) {
    for (std::size_t nn = 0; nn < n; ++nn) {
      for (std::size_t hh = 0; hh < h; ++hh) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          for (std::size_t i = 0; i < np; ++i) {
            if (mask.fallback[i] && !all_fallback) continue;
            const std::size_t row = kk * np + i;
            const double* r = &a[((((bb * n + nn) * h + hh) * k * np) + row) * c * om];
            for (std::size_t cc = 0; cc < c; ++cc) {
              for (std::size_t j = 0; j < om; ++j) {
                const double v = r[cc * om + j];
                if (v == 0.0) continue;
                // Lag behind the patch's last real step, clamped for fallback rows.
                const std::size_t pos = offset + j;
                const std::size_t lag = pos <= mask.last_step[i] ? mask.last_step[i] - pos : 0;
                map.at(nn, kk, cc, om - 1 - std::min(lag, om - 1)) += v * norm;
              }
            }
          }
        }
      }
    }
  }
  return map;
}

MergedAttention merge_wind_pair(const CausalAttentionMap& map,
                                const std::vector<std::string>& met_names) {
  if (met_names.size() != map.variables) {
    throw ShapeError("attention map has " + std::to_string(map.variables) + " variables but " +
                     std::to_string(met_names.size()) + " labels were given");
  }
  const auto sin_it = std::find(met_names.begin(), met_names.end(), kWindDirectionSin);
  const auto cos_it = std::find(met_names.begin(), met_names.end(), kWindDirectionCos);
  if (sin_it == met_names.end() || cos_it == met_names.end()) return {map, met_names};
  const std::size_t si = static_cast<std::size_t>(sin_it - met_names.begin());
  const std::size_t ci = static_cast<std::size_t>(cos_it - met_names.begin());

  MergedAttention out;
  std::vector<std::size_t> source;  // original variable per merged slot; ci folds into si
  for (std::size_t v = 0; v < met_names.size(); ++v) {
    if (v == ci) continue;
    source.push_back(v);
    out.met_names.push_back(v == si ? kWindDirection : met_names[v]);
  }
  auto& m = out.map;
  m = {map.stations, map.pollutants, source.size(), map.omega,
       std::vector<double>(map.stations * map.pollutants * source.size() * map.omega, 0.0)};
  for (std::size_t n = 0; n < map.stations; ++n) {
    for (std::size_t k = 0; k < map.pollutants; ++k) {
      for (std::size_t v = 0; v < source.size(); ++v) {
        for (std::size_t j = 0; j < map.omega; ++j) {
          double w = map.at(n, k, source[v], j);
          if (source[v] == si) w += map.at(n, k, ci, j);
          m.at(n, k, v, j) = w;
        }
      }
    }
  }
  return out;
}

namespace {

void check_labels(const CausalAttentionMap& map, const AttentionLabels& labels) {
  if (labels.station_ids.size() != map.stations || labels.pollutants.size() != map.pollutants ||
      labels.met_variables.size() != map.variables) {
    throw ShapeError("attention labels (" + std::to_string(labels.station_ids.size()) + " stations, " +
                     std::to_string(labels.pollutants.size()) + " pollutants, " +
                     std::to_string(labels.met_variables.size()) + " variables) do not match the map (" +
                     std::to_string(map.stations) + ", " + std::to_string(map.pollutants) + ", " +
                     std::to_string(map.variables) + ")");
  }
}

double group_mass(const CausalAttentionMap& map, std::size_t n, std::size_t k) {
  double s = 0.0;
  for (std::size_t c = 0; c < map.variables; ++c) {
    for (std::size_t j = 0; j < map.omega; ++j) s += map.at(n, k, c, j);
  }
  return s;
}

}  // namespace

void export_causal_attention_csv(const std::string& path, const CausalAttentionMap& map,
                                 const AttentionLabels& labels) {
  check_labels(map, labels);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "station_id,pollutant,met_variable,lag_hours,weight\n";
  for (std::size_t n = 0; n < map.stations; ++n) {
    for (std::size_t k = 0; k < map.pollutants; ++k) {
      const double mass = group_mass(map, n, k);
      for (std::size_t c = 0; c < map.variables; ++c) {
        for (std::size_t j = 0; j < map.omega; ++j) {
          const double lag = static_cast<double>(map.omega - 1 - j) * labels.dt_hours;
          const double w = mass > 0.0 ? map.at(n, k, c, j) / mass : 0.0;
          out << labels.station_ids[n] << ',' << labels.pollutants[k] << ','
              << labels.met_variables[c] << ',' << format_double(lag) << ',' << format_double(w)
              << '\n';
        }
      }
    }
  }
}

void export_causal_attention_svg(const std::string& path, const CausalAttentionMap& map,
                                 const AttentionLabels& labels) {
  check_labels(map, labels);
  constexpr int kCell = 14, kLabelW = 130, kTitleH = 22, kGap = 18;
  const int grid_w = kCell * static_cast<int>(map.omega);
  const int grid_h = kCell * static_cast<int>(map.variables);
  const int panel_w = kLabelW + grid_w + kGap;
  const int panel_h = kTitleH + grid_h + kGap;
  const int width = panel_w * static_cast<int>(map.pollutants);
  const int height = panel_h * static_cast<int>(map.stations) + 20;

  double top = 0.0;
  for (double v : map.values) top = std::max(top, v);

  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  out << "<text x=\"4\" y=\"14\">lag axis: " << format_double((map.omega - 1) * labels.dt_hours)
      << " h (left) to 0 h (right)</text>\n";
  char color[16];
  for (std::size_t n = 0; n < map.stations; ++n) {
    for (std::size_t k = 0; k < map.pollutants; ++k) {
      const int x0 = static_cast<int>(k) * panel_w;
      const int y0 = 20 + static_cast<int>(n) * panel_h;
      out << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + 14 << "\">" << labels.station_ids[n]
          << " / " << labels.pollutants[k] << "</text>\n";
      for (std::size_t c = 0; c < map.variables; ++c) {
        const int y = y0 + kTitleH + static_cast<int>(c) * kCell;
        out << "<text x=\"" << x0 + 4 << "\" y=\"" << y + kCell - 3 << "\">"
            << labels.met_variables[c] << "</text>\n";
        for (std::size_t j = 0; j < map.omega; ++j) {
          const double t = top > 0.0 ? map.at(n, k, c, j) / top : 0.0;
          // White to dark blue, linear in weight.
          std::snprintf(color, sizeof(color), "#%02x%02x%02x", static_cast<int>(255 - 247 * t),
                        static_cast<int>(255 - 207 * t), static_cast<int>(255 - 148 * t));
          out << "<rect x=\"" << x0 + kLabelW + static_cast<int>(j) * kCell << "\" y=\"" << y
              << "\" width=\"" << kCell << "\" height=\"" << kCell << "\" fill=\"" << color
              << "\"><title>" << format_double(map.at(n, k, c, j)) << "</title></rect>\n";
        }
      }
    }
  }
  out << "</svg>\n";
}

}  // namespace airpcm
