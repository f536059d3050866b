#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "airpcm/data.hpp"
#include "airpcm/geo_graph.hpp"
#include "airpcm/metrics.hpp"
#include "airpcm/model.hpp"

namespace airpcm {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::size_t train_stride = 1;
  std::size_t max_steps = 0;  // optimizer steps across all epochs; 0 means no cap

  void validate() const;
  void merge_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Mean absolute deviation over all elements.
Tensor loss_mae(const Tensor& predicted, const Tensor& target);

struct AdamState {
  std::vector<std::vector<double>> m, v;
};

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before scaling.
double clip_gradients(ParameterSet& params, double max_norm);

// One Adam update with bias correction (step_index starts at 1). Gradients
// are clipped first.
void adam_step(ParameterSet& params, AdamState& state, const TrainConfig& config,
               std::size_t step_index);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
};

struct TrainResult {
  AirPCMWeights best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::size_t steps = 0;
};

// Validation score for the current weights; lower is better.
using Validator = std::function<double(const AirPCMWeights&)>;
using EpochCallback = std::function<void(const EpochLog&)>;

// Mean absolute error of the model over windows, in the windows' units.
double windows_mae(const AirPCMWeights& w, const StationGraph& graph,
                   const std::vector<WindowSample>& windows, std::size_t batch_size = 32);

// Seeded mini-batch Adam on MAE with early stopping on validation MAE.
// Returns the best-validation weights. Throws DivergenceError on a
// non-finite loss.
TrainResult train(const AirPCMWeights& initial, const StationGraph& graph,
                  const std::vector<WindowSample>& train_windows,
                  const std::vector<WindowSample>& val_windows, const TrainConfig& config,
                  const Validator& validator = {}, const EpochCallback& on_epoch = {});

// epoch,train_loss,val_mae
void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

// Model forecasts for every window: W x N x K x kappa (same units as the windows).
Tensor predict_windows(const AirPCMWeights& w, const StationGraph& graph,
                       const std::vector<WindowSample>& windows, std::size_t batch_size = 32);

// Mean of the past tau steps per station and pollutant, repeated kappa times.
Tensor historical_average(const std::vector<WindowSample>& windows);

// Window targets stacked to W x N x K x kappa.
Tensor window_targets(const std::vector<WindowSample>& windows);

// Maps every value of a W x N x K x kappa tensor back to physical units.
Tensor denormalize_forecasts(const Tensor& x, const NormStats& stats);

// Sudden-change flags (W x N x kappa) at each window's target steps, computed
// from the physical PM2.5 series of `table`. Empty when PM2.5 is absent.
std::vector<bool> window_sudden_flags(const ObservationTable& physical,
                                      const std::vector<WindowSample>& windows);

}  // namespace airpcm
