#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "airpcm/data.hpp"
#include "airpcm/geo_graph.hpp"
#include "airpcm/parameter.hpp"
#include "airpcm/tensor.hpp"

namespace airpcm {

struct AirPCMConfig {
  std::size_t stations = 1;     // N
  std::size_t pollutants = 1;   // K
  std::size_t meteorology = 1;  // C, after wind encoding
  std::size_t tau = 24;
  std::size_t kappa = 24;
  std::size_t d_h = 32;
  std::size_t d_p = 64;
  std::size_t patch_len = 6;
  std::size_t patch_stride = 3;
  std::size_t causal_window = 0;  // 0 selects min(tau, 24)
  std::size_t n_heads = 4;
  std::size_t depth = 2;
  std::size_t gat_heads = 2;
  double dropout = 0.1;
  std::size_t k_neighbors = 5;

  std::size_t n_patches() const { return (tau - patch_len) / patch_stride + 2; }
  std::size_t omega() const { return causal_window ? causal_window : std::min<std::size_t>(tau, 24); }
  void validate() const;

  // Unknown keys are rejected; missing keys keep their current value.
  void merge_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct AirPCMWeights {
  AirPCMConfig config;
  ParameterSet params;
};

// Parameter names and shapes depend only on the config.
AirPCMWeights init_weights(const AirPCMConfig& config, std::uint64_t seed);

struct ForwardOptions {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout
};

enum class Branch { kPollutant, kMeteorology };

// Batched model input; B windows share one graph.
struct ModelInput {
  Tensor pollutants;     // B x N x K x tau
  Tensor meteorology;    // B x N x C x tau
  Tensor time_features;  // B x n_p x 4
};

ModelInput make_input(const std::vector<const WindowSample*>& windows, const AirPCMConfig& config);
Tensor stack_targets(const std::vector<const WindowSample*>& windows);  // B x N x K x kappa

// N x N 0/1 mask: row i admits itself and every station it shares an edge with,
// in either direction.
Tensor gat_mask(const StationGraph& graph);

// h: ... x N x d_h. Multi-head additive graph attention followed by ELU.
Tensor gat_forward(const Tensor& h, const Tensor& mask, const AirPCMWeights& w,
                   const std::string& prefix);

// x: [B x] N x D x tau -> same shape.
Tensor mscm_forward(const Tensor& x, const StationGraph& graph, const AirPCMWeights& w, Branch branch,
                    const ForwardOptions& opts = {});

// Time indices covered by the patches, replicate-padded at the end.
std::vector<std::size_t> patch_indices(const AirPCMConfig& config);
// x: ... x tau -> ... x n_p x l_p.
Tensor patchify(const Tensor& x, const AirPCMConfig& config);

// Start-time features (year/2000, month/12, day/31, hour/24) of every patch: n_p x 4.
Tensor patch_time_features(UnixSeconds window_start, double dt_hours, const AirPCMConfig& config);

// patches: B x N x K x n_p x l_p, time_features: B x n_p x 4 -> B x N x K x n_p x d_p.
Tensor embed_patches(const Tensor& patches, const Tensor& time_features, const AirPCMWeights& w);

struct CausalMask {
  std::size_t rows = 0;  // n_p
  std::size_t cols = 0;  // omega
  std::size_t tau = 0;
  std::vector<double> values;
  std::vector<std::size_t> last_step;  // e_i, last real timestep of patch i
  std::vector<bool> fallback;          // row admitted only by the fallback rule

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

CausalMask build_causal_mask(const AirPCMConfig& config);

struct MptcResult {
  Tensor p_mcam;     // B x N x K x n_p x d_p
  Tensor attention;  // B x N x heads x (K n_p) x (C omega), before dropout
};

// p_emb: B x N x K x n_p x d_p, m_window: B x N x C x omega.
MptcResult mptc_forward(const Tensor& p_emb, const Tensor& m_window, const CausalMask& mask,
                        const AirPCMWeights& w, const ForwardOptions& opts = {});

// -> B x N x K x kappa.
Tensor deco_forward(const Tensor& p_mcam, const Tensor& p_emb, const AirPCMWeights& w,
                    const ForwardOptions& opts = {});

struct ForwardResult {
  Tensor forecast;  // B x N x K x kappa
  Tensor p_emb;
  Tensor p_mcam;
  Tensor attention;
};

ForwardResult forward(const ModelInput& input, const StationGraph& graph, const AirPCMWeights& w,
                      const ForwardOptions& opts = {});

/// Attention mass per station, pollutant, met variable and lag. Lag index j
/// stands for a lag of (omega - 1 - j) steps behind the attending patch's
/// last step, so the most recent position is last.
struct CausalAttentionMap {
  std::size_t stations = 0, pollutants = 0, variables = 0, omega = 0;
  std::vector<double> values;

  double& at(std::size_t n, std::size_t k, std::size_t c, std::size_t j) {
    return values[((n * pollutants + k) * variables + c) * omega + j];
  }
  double at(std::size_t n, std::size_t k, std::size_t c, std::size_t j) const {
    return values[((n * pollutants + k) * variables + c) * omega + j];
  }
  // Attention-weighted mean lag in steps within one (station, pollutant, variable) slice.
  double mean_lag(std::size_t n, std::size_t k, std::size_t c) const;
  // Same, pooled over stations.
  double mean_lag(std::size_t k, std::size_t c) const;
};

// Averages raw attention over batch, heads and patches.
CausalAttentionMap causal_attention_map(const Tensor& attention, const AirPCMConfig& config);

struct MergedAttention {
  CausalAttentionMap map;
  std::vector<std::string> met_names;
};

// Sums the wind-direction sine/cosine slices into one "wind_direction" variable.
MergedAttention merge_wind_pair(const CausalAttentionMap& map,
                                const std::vector<std::string>& met_names);

struct AttentionLabels {
  std::vector<std::string> station_ids;
  std::vector<std::string> pollutants;
  std::vector<std::string> met_variables;
  double dt_hours = 1.0;
};

// station_id,pollutant,met_variable,lag_hours,weight
void export_causal_attention_csv(const std::string& path, const CausalAttentionMap& map,
                                 const AttentionLabels& labels);
// Variables x lags heatmap grids, one panel per station and pollutant.
void export_causal_attention_svg(const std::string& path, const CausalAttentionMap& map,
                                 const AttentionLabels& labels);

// Checkpoint directory: manifest.json + weights.bin (float32, little endian).
void save_checkpoint(const std::string& dir, const AirPCMWeights& w,
                     const nlohmann::json& extra = nlohmann::json::object());
struct LoadedCheckpoint {
  AirPCMWeights weights;
  nlohmann::json manifest;
};
LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace airpcm
