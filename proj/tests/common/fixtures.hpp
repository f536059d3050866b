#pragma once

#include <random>

#include "airpcm/geo_graph.hpp"
#include "airpcm/model.hpp"
#include "airpcm/synthetic.hpp"

namespace airpcm::testing {

// N=3, K=2, tau=8 at toy widths.
inline AirPCMConfig tiny_config(std::size_t n = 3, std::size_t k = 2, std::size_t c = 2) {
  AirPCMConfig cfg;
  cfg.stations = n;
  cfg.pollutants = k;
  cfg.meteorology = c;
  cfg.tau = 8;
  cfg.kappa = 4;
  cfg.d_h = 4;
  cfg.d_p = 8;
  cfg.patch_len = 4;
  cfg.patch_stride = 2;
  cfg.causal_window = 8;
  cfg.n_heads = 2;
  cfg.gat_heads = 2;
  cfg.depth = 1;
  cfg.dropout = 0.0;
  cfg.k_neighbors = 2;
  return cfg;
}

inline StationGraph tiny_graph(std::size_t n, std::size_t k, std::uint64_t seed) {
  return build_station_graph(random_stations(n, seed), k);
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline ModelInput random_input(const AirPCMConfig& cfg, std::size_t batch, std::mt19937_64& rng) {
  ModelInput in;
  in.pollutants = random_tensor({batch, cfg.stations, cfg.pollutants, cfg.tau}, rng);
  in.meteorology = random_tensor({batch, cfg.stations, cfg.meteorology, cfg.tau}, rng);
  std::vector<double> tf;
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor f = patch_time_features(1705449600 + static_cast<UnixSeconds>(b) * 10800, 3.0, cfg);
    tf.insert(tf.end(), f.data().begin(), f.data().end());
  }
  in.time_features = Tensor({batch, cfg.n_patches(), 4}, std::move(tf));
  return in;
}

// Reorders the station axis (axis 1) so that out[:, perm[i]] = x[:, i].
inline Tensor permute_stations(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
  return gather(x, 1, inverse);
}

inline std::vector<Station> permute_station_list(const std::vector<Station>& s,
                                                 const std::vector<std::size_t>& perm) {
  std::vector<Station> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[perm[i]] = s[i];
  return out;
}

}  // namespace airpcm::testing
