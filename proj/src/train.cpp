#include "airpcm/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "airpcm/csv.hpp"
#include "airpcm/error.hpp"

namespace airpcm {

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("train config: " + what);
  };
  require(learning_rate > 0.0 && epsilon > 0.0 && grad_clip_norm > 0.0,
          "learning_rate, epsilon and grad_clip_norm must be positive");
  require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, "betas must lie in (0, 1)");
  require(batch_size > 0 && max_epochs > 0 && patience > 0 && train_stride > 0,
          "batch_size, max_epochs, patience and train_stride must be positive");
  require(patience <= max_epochs, "patience must not exceed max_epochs");
}

void TrainConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const std::set<std::string> known{"learning_rate", "betas",     "epsilon",        "batch_size",
                                    "max_epochs",    "patience",  "grad_clip_norm", "seed",
                                    "train_stride",  "max_steps"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("train config: unknown key '" + key + "'");
  }
  try {
    learning_rate = j.value("learning_rate", learning_rate);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("train config: betas needs two values");
      beta1 = b[0];
      beta2 = b[1];
    }
    epsilon = j.value("epsilon", epsilon);
    batch_size = j.value("batch_size", batch_size);
    max_epochs = j.value("max_epochs", max_epochs);
    patience = j.value("patience", patience);
    grad_clip_norm = j.value("grad_clip_norm", grad_clip_norm);
    seed = j.value("seed", seed);
    train_stride = j.value("train_stride", train_stride);
    max_steps = j.value("max_steps", max_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"betas", {beta1, beta2}},
          {"epsilon", epsilon},             {"batch_size", batch_size},
          {"max_epochs", max_epochs},       {"patience", patience},
          {"grad_clip_norm", grad_clip_norm}, {"seed", seed},
          {"train_stride", train_stride},   {"max_steps", max_steps}};
}

Tensor loss_mae(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw ShapeError("loss_mae shape mismatch: " + to_string(predicted.shape()) + " vs " +
                     to_string(target.shape()));
  }
  const Tensor loss = mean(abs(predicted - target));
  check_finite(loss, "training loss");
  return loss;
}

double clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.items()) {
    if (!p.tensor.has_grad()) throw GraphError("parameter " + p.name + " has no gradient");
    for (double g : p.tensor.node()->grad) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params.items()) {
      for (double& g : p.tensor.node()->grad) g *= s;
    }
  }
  return norm;
}

void adam_step(ParameterSet& params, AdamState& state, const TrainConfig& config,
               std::size_t step_index) {
  if (step_index == 0) throw GraphError("adam step index starts at 1");
  clip_gradients(params, config.grad_clip_norm);
  if (state.m.empty()) {
    for (const auto& p : params.items()) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam state does not match the parameters");
  const auto t = static_cast<double>(step_index);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.items()[i];
    const auto& g = p.tensor.node()->grad;
    auto x = p.tensor.mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      x[j] -= config.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.epsilon);
    }
  }
}

namespace {

std::vector<const WindowSample*> batch_of(const std::vector<WindowSample>& windows,
                                          const std::vector<std::size_t>& order, std::size_t from,
                                          std::size_t count) {
  std::vector<const WindowSample*> out;
  for (std::size_t i = from; i < std::min(order.size(), from + count); ++i) {
    out.push_back(&windows[order[i]]);
  }
  return out;
}

std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  return order;
}

}  // namespace

Tensor predict_windows(const AirPCMWeights& w, const StationGraph& graph,
                       const std::vector<WindowSample>& windows, std::size_t batch_size) {
  if (windows.empty()) throw DataError("no windows to predict");
  const auto order = identity_order(windows.size());
  std::vector<Tensor> parts;
  for (std::size_t from = 0; from < windows.size(); from += batch_size) {
    const auto batch = batch_of(windows, order, from, batch_size);
    parts.push_back(forward(make_input(batch, w.config), graph, w).forecast.detach());
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

Tensor window_targets(const std::vector<WindowSample>& windows) {
  std::vector<const WindowSample*> all;
  for (const auto& w : windows) all.push_back(&w);
  return stack_targets(all);
}

double windows_mae(const AirPCMWeights& w, const StationGraph& graph,
                   const std::vector<WindowSample>& windows, std::size_t batch_size) {
  const Tensor p = predict_windows(w, graph, windows, batch_size);
  const Tensor t = window_targets(windows);
  return error_summary(p.data(), t.data()).mae;
}

TrainResult train(const AirPCMWeights& initial, const StationGraph& graph,
                  const std::vector<WindowSample>& train_windows,
                  const std::vector<WindowSample>& val_windows, const TrainConfig& config,
                  const Validator& validator, const EpochCallback& on_epoch) {
  config.validate();
  if (train_windows.empty()) throw DataError("training split yields no windows");
  if (val_windows.empty() && !validator) throw DataError("validation split yields no windows");

  AirPCMWeights w{initial.config, initial.params.clone()};
  TrainResult result{{initial.config, w.params.clone()}, {}, 0, 0};
  const Validator validate = validator ? validator : [&](const AirPCMWeights& cur) {
    return windows_mae(cur, graph, val_windows);
  };

  std::mt19937_64 rng(config.seed);
  AdamState adam;
  auto order = identity_order(train_windows.size());
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t from = 0; from < order.size(); from += config.batch_size) {
      if (config.max_steps && result.steps >= config.max_steps) break;
      const auto batch = batch_of(train_windows, order, from, config.batch_size);
      const ForwardOptions opts{true, &rng};
      Tensor loss;
      try {
        const Tensor pred = forward(make_input(batch, w.config), graph, w, opts).forecast;
        loss = loss_mae(pred, stack_targets(batch));
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(result.steps + 1) + ": " + e.what());
      }
      backward(loss, w.params);
      adam_step(w.params, adam, config, ++result.steps);
      loss_sum += loss.item();
      ++batches;
    }
    if (batches == 0) break;
    const EpochLog entry{epoch, loss_sum / static_cast<double>(batches), validate(w)};
    if (!std::isfinite(entry.val_mae)) {
      throw DivergenceError("training diverged: non-finite validation MAE at epoch " +
                            std::to_string(epoch));
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (entry.val_mae < best) {
      best = entry.val_mae;
      result.best_epoch = epoch;
      result.best.params.assign_from(w.params);
      bad_epochs = 0;
    } else if (++bad_epochs >= config.patience) {
      break;
    }
  }
  return result;
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,train_loss,val_mae\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_mae) << '\n';
  }
}

Tensor historical_average(const std::vector<WindowSample>& windows) {
  if (windows.empty()) throw DataError("no windows for the historical average");
  const auto& f = windows.front();
  const std::size_t n = f.past_pollutants.stations, k = f.past_pollutants.channels;
  const std::size_t tau = f.past_pollutants.steps, kappa = f.future_pollutants.steps;
  std::vector<double> out;
  out.reserve(windows.size() * n * k * kappa);
  for (const auto& w : windows) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < k; ++c) {
        double m = 0.0;
        for (std::size_t t = 0; t < tau; ++t) m += w.past_pollutants(s, c, t);
        m /= static_cast<double>(tau);
        out.insert(out.end(), kappa, m);
      }
    }
  }
  return Tensor({windows.size(), n, k, kappa}, std::move(out));
}

Tensor denormalize_forecasts(const Tensor& x, const NormStats& stats) {
  if (x.rank() != 4 || x.shape()[2] != stats.pollutant_mean.size()) {
    throw ShapeError("cannot denormalize " + to_string(x.shape()) + " with " +
                     std::to_string(stats.pollutant_mean.size()) + " pollutant statistics");
  }
  const std::size_t k = x.shape()[2], h = x.shape()[3];
  std::vector<double> v(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = stats.denormalize_pollutant((i / h) % k, v[i]);
  return Tensor(x.shape(), std::move(v));
}

std::vector<bool> window_sudden_flags(const ObservationTable& physical,
                                      const std::vector<WindowSample>& windows) {
  const auto it = std::find(physical.pollutant_names.begin(), physical.pollutant_names.end(), "pm25");
  if (it == physical.pollutant_names.end() || windows.empty()) return {};
  const auto k = static_cast<std::size_t>(it - physical.pollutant_names.begin());
  const std::size_t n = physical.stations.size(), steps = physical.steps();
  std::vector<std::vector<bool>> per_station;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> series(steps);
    for (std::size_t t = 0; t < steps; ++t) series[t] = physical.pollutants(s, k, t);
    per_station.push_back(detect_sudden_changes(series, physical.dt_hours));
  }
  const std::size_t tau = windows.front().past_pollutants.steps;
  const std::size_t kappa = windows.front().future_pollutants.steps;
  std::vector<bool> flags;
  flags.reserve(windows.size() * n * kappa);
  for (const auto& w : windows) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t h = 0; h < kappa; ++h) {
        const std::size_t abs = w.start_index + tau + h;
        if (abs < physical.origin || abs - physical.origin >= steps) {
          throw DataError("window target lies outside the table used for sudden-change flags");
        }
        flags.push_back(per_station[s][abs - physical.origin]);
      }
    }
  }
  return flags;
}

}  // namespace airpcm
