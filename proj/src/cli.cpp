#include "airpcm/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "airpcm/csv.hpp"
#include "airpcm/digest.hpp"
#include "airpcm/error.hpp"
#include "airpcm/synthetic.hpp"
#include "airpcm/train.hpp"

namespace airpcm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr const char* kManifestName = "run_manifest.json";
constexpr const char* kLockName = ".airpcm.lock";

// Held for the lifetime of a run; a second writer to the same target fails.
class OutputLock {
 public:
  explicit OutputLock(fs::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw ConfigError("output is locked by another run: " + path_.string() +
                        " exists (delete it if no other run is active)");
    }
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

OutputLock lock_dir(const fs::path& dir) {
  fs::create_directories(dir);
  return OutputLock(dir / kLockName);
}

OutputLock lock_file(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  return OutputLock(fs::path(file.string() + ".lock"));
}

struct Run {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::object();
  std::uint64_t seed = 0;
  json outputs = json::array();
  Clock::time_point start = Clock::now();

  void input(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DataError("missing input file: " + p.string());
    inputs[p.string()] = sha256_file(p.string());
  }
  void output(const fs::path& p) { outputs.push_back(p.string()); }

  void write_manifest(const fs::path& path) const {
    json j{{"command", command},
           {"argv", argv},
           {"config", config},
           {"input_sha256", inputs},
           {"seed", seed},
           {"outputs", outputs},
           {"duration_seconds", std::chrono::duration<double>(Clock::now() - start).count()}};
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(2) << '\n';
  }
};

json read_json_file(const fs::path& path, Run& run) {
  run.input(path);
  std::ifstream is(path);
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// flag > config file > AIRPCM_SEED > fallback
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& file,
                           std::uint64_t fallback) {
  if (flag) return *flag;
  if (file.is_object() && file.contains("seed")) return file.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("AIRPCM_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::strlen(env)) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("AIRPCM_SEED must be a non-negative integer, got '") + env + "'");
  }
  return fallback;
}

ObservationTable load_data_dir(const fs::path& dir, Run& run) {
  const fs::path stations = dir / "stations.csv";
  const fs::path observations = dir / "observations.csv";
  run.input(stations);
  run.input(observations);
  return encode_wind_direction(load_observations(stations.string(), observations.string()));
}

json stats_to_json(const NormStats& s) {
  return {{"pollutant_mean", s.pollutant_mean},
          {"pollutant_std", s.pollutant_std},
          {"met_mean", s.met_mean},
          {"met_std", s.met_std}};
}

NormStats stats_from_json(const json& j) {
  NormStats s;
  s.pollutant_mean = j.at("pollutant_mean").get<std::vector<double>>();
  s.pollutant_std = j.at("pollutant_std").get<std::vector<double>>();
  s.met_mean = j.at("met_mean").get<std::vector<double>>();
  s.met_std = j.at("met_std").get<std::vector<double>>();
  return s;
}

json stations_to_json(const std::vector<Station>& stations) {
  json out = json::array();
  for (const auto& s : stations) {
    out.push_back({{"id", s.id}, {"latitude", s.latitude}, {"longitude", s.longitude}, {"altitude", s.altitude}});
  }
  return out;
}

std::vector<Station> stations_from_json(const json& j) {
  std::vector<Station> out;
  for (const auto& s : j) {
    out.push_back({s.at("id").get<std::string>(), s.at("latitude").get<double>(), s.at("longitude").get<double>(),
                   s.at("altitude").get<double>()});
  }
  return out;
}

// Everything predict, evaluate and export need besides the weights.
struct Model {
  AirPCMWeights weights;
  StationGraph graph;
  NormStats stats;
  std::vector<std::string> pollutants, met_names;
  double dt_hours = 1.0;
};

Model open_checkpoint(const fs::path& dir, Run& run) {
  run.input(dir / "manifest.json");
  run.input(dir / "weights.bin");
  auto loaded = load_checkpoint(dir.string());
  const auto& m = loaded.manifest;
  for (const char* key : {"stations", "normalizer", "pollutant_names", "met_names", "dt_hours"}) {
    if (!m.contains(key)) throw DataError("checkpoint " + dir.string() + " lacks '" + key + "'; was it written by train?");
  }
  Model model;
  model.weights = std::move(loaded.weights);
  model.graph = build_station_graph(stations_from_json(m.at("stations")), model.weights.config.k_neighbors);
  model.stats = stats_from_json(m.at("normalizer"));
  model.pollutants = m.at("pollutant_names").get<std::vector<std::string>>();
  model.met_names = m.at("met_names").get<std::vector<std::string>>();
  model.dt_hours = m.at("dt_hours").get<double>();
  return model;
}

void check_compatible(const Model& model, const ObservationTable& table) {
  if (table.stations.size() != model.graph.size()) {
    throw DataError("data has " + std::to_string(table.stations.size()) + " stations, the checkpoint expects " +
                    std::to_string(model.graph.size()));
  }
  for (std::size_t n = 0; n < table.stations.size(); ++n) {
    if (table.stations[n].id != model.graph.stations[n].id) {
      throw DataError("station " + std::to_string(n) + " is '" + table.stations[n].id +
                      "' in the data but '" + model.graph.stations[n].id + "' in the checkpoint");
    }
  }
  if (table.pollutant_names != model.pollutants || table.met_names != model.met_names) {
    throw DataError("data columns do not match the checkpoint's pollutant and meteorology columns");
  }
  if (std::fabs(table.dt_hours - model.dt_hours) > 1e-9) {
    throw DataError("data sampling interval " + format_double(table.dt_hours) + " h differs from the checkpoint's " +
                    format_double(model.dt_hours) + " h");
  }
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string spec, out;
  std::optional<std::size_t> stations;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_synthetic(const GenArgs& a, Run& run, std::ostream& out) {
  const json file = read_json_file(a.spec, run);
  json merged = file;
  if (a.stations) merged["N"] = *a.stations;
  merged["seed"] = resolve_seed(a.seed, file, 0);
  const auto spec = SyntheticSpec::from_json(merged);
  run.seed = spec.seed;
  run.config = spec.to_json();

  const fs::path dir(a.out);
  const auto lock = lock_dir(dir);
  const auto graph = build_station_graph(random_stations(spec.stations, spec.seed), spec.k_neighbors);
  const auto table = generate_synthetic(spec, graph);
  write_stations_csv((dir / "stations.csv").string(), table.stations);
  write_observations_csv((dir / "observations.csv").string(), table);
  write_json_file(dir / "synthetic_spec.json", spec.to_json());
  for (const char* f : {"stations.csv", "observations.csv", "synthetic_spec.json"}) run.output(dir / f);
  run.output(dir / kManifestName);
  run.write_manifest(dir / kManifestName);
  out << "wrote " << spec.stations << " stations x " << table.steps() << " steps to " << dir.string() << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string data, config, train_config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, patience, max_steps, train_stride;
  std::optional<double> learning_rate;
};

int cmd_train(const TrainArgs& a, Run& run, std::ostream& out) {
  const auto table = load_data_dir(a.data, run);

  AirPCMConfig cfg;
  cfg.stations = table.stations.size();
  cfg.pollutants = table.pollutant_names.size();
  cfg.meteorology = table.met_names.size();
  if (!a.config.empty()) {
    const json file = read_json_file(a.config, run);
    cfg.merge_json(file);
    for (const auto& [key, n] : {std::pair{"stations", table.stations.size()},
                                 std::pair{"pollutants", table.pollutant_names.size()},
                                 std::pair{"meteorology", table.met_names.size()}}) {
      if (file.contains(key) && file.at(key).get<std::size_t>() != n) {
        throw ConfigError(std::string("model config sets ") + key + " = " + file.at(key).dump() +
                          " but the data has " + std::to_string(n));
      }
    }
  }
  cfg.validate();

  TrainConfig tc;
  json train_file = json::object();
  if (!a.train_config.empty()) {
    train_file = read_json_file(a.train_config, run);
    tc.merge_json(train_file);
  }
  tc.seed = resolve_seed(a.seed, train_file, 0);
  if (a.epochs) tc.max_epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.patience) {
    tc.patience = *a.patience;
  } else if (!train_file.contains("patience")) {
    tc.patience = std::min(tc.patience, tc.max_epochs);
  }
  if (a.max_steps) tc.max_steps = *a.max_steps;
  if (a.train_stride) tc.train_stride = *a.train_stride;
  if (a.learning_rate) tc.learning_rate = *a.learning_rate;
  tc.validate();
  run.seed = tc.seed;
  run.config = {{"model", cfg.to_json()}, {"train", tc.to_json()}};

  const fs::path dir(a.out);
  const auto lock = lock_dir(dir);
  const auto graph = build_station_graph(table.stations, cfg.k_neighbors);
  const auto split = chronological_split(table, cfg.tau, cfg.kappa);
  const auto norm = fit_apply_normalizer(split.train, {split.val});
  const auto train_w = make_windows(norm.train, cfg.tau, cfg.kappa, tc.train_stride);
  const auto val_w = make_windows(norm.others[0], cfg.tau, cfg.kappa, cfg.tau + cfg.kappa);
  if (train_w.empty() || val_w.empty()) {
    throw DataError("not enough steps for tau + kappa = " + std::to_string(cfg.tau + cfg.kappa) +
                    " in the training and validation splits (" + std::to_string(table.steps()) + " steps in total)");
  }
  out << "training on " << train_w.size() << " windows, validating on " << val_w.size() << '\n';
  const auto result = train(init_weights(cfg, tc.seed), graph, train_w, val_w, tc, {}, [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " train_loss " << format_double(e.train_loss) << " val_mae "
        << format_double(e.val_mae) << '\n';
  });

  const json extra{{"stations", stations_to_json(table.stations)},
                   {"normalizer", stats_to_json(norm.stats)},
                   {"pollutant_names", table.pollutant_names},
                   {"met_names", table.met_names},
                   {"dt_hours", table.dt_hours},
                   {"train_config", tc.to_json()},
                   {"best_epoch", result.best_epoch}};
  save_checkpoint(dir.string(), result.best, extra);
  write_training_log((dir / "training_log.csv").string(), result.log);
  for (const char* f : {"manifest.json", "weights.bin", "training_log.csv", kManifestName}) run.output(dir / f);
  run.write_manifest(dir / kManifestName);
  out << "best epoch " << result.best_epoch << ", checkpoint in " << dir.string() << '\n';
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, data, at, out;
};

int cmd_predict(const PredictArgs& a, Run& run, std::ostream& out) {
  const Model model = open_checkpoint(a.checkpoint, run);
  const auto table = load_data_dir(a.data, run);
  check_compatible(model, table);
  const auto& cfg = model.weights.config;
  run.config = {{"model", cfg.to_json()}, {"at", a.at}};

  const UnixSeconds at = parse_iso8601(a.at);
  const UnixSeconds step = hours_to_seconds(table.dt_hours);
  const UnixSeconds first = table.timestamps.front();
  const UnixSeconds history_start = at - static_cast<UnixSeconds>(cfg.tau) * step;
  const std::string need = std::to_string(cfg.tau) + " steps (" + format_double(cfg.tau * table.dt_hours) +
                           " h) of history from " + format_iso8601(history_start) + " to " +
                           format_iso8601(at - step);
  if ((at - first) % step != 0) {
    throw DataError("--at " + a.at + " is not on the " + format_double(table.dt_hours) + " h grid starting at " +
                    format_iso8601(first));
  }
  const auto end = (at - first) / step;  // index of the first forecast step
  if (history_start < first || end > static_cast<UnixSeconds>(table.steps())) {
    throw DataError("forecast at " + a.at + " needs " + need + ", but the data covers " + format_iso8601(first) +
                    " to " + format_iso8601(table.timestamps.back()));
  }

  const auto norm = model.stats.apply(table);
  WindowSample w;
  const auto begin = static_cast<std::size_t>(end) - cfg.tau;
  w.past_pollutants = norm.pollutants.segment(begin, cfg.tau);
  w.past_meteorology = norm.meteorology.segment(begin, cfg.tau);
  w.future_pollutants = SeriesCube(cfg.stations, cfg.pollutants, cfg.kappa);
  w.start_index = norm.origin + begin;
  w.start_time = table.timestamps[begin];
  w.dt_hours = table.dt_hours;
  const Tensor z = predict_windows(model.weights, model.graph, {w});
  const Tensor y = denormalize_forecasts(z, model.stats);

  const fs::path path(a.out);
  const auto lock = lock_file(path);
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "station_id,pollutant,timestamp,predicted_value\n";
  for (std::size_t n = 0; n < cfg.stations; ++n) {
    for (std::size_t k = 0; k < cfg.pollutants; ++k) {
      for (std::size_t h = 0; h < cfg.kappa; ++h) {
        os << table.stations[n].id << ',' << model.pollutants[k] << ','
           << format_iso8601(at + static_cast<UnixSeconds>(h) * step) << ',' << format_double(y.at({0, n, k, h}))
           << '\n';
      }
    }
  }
  os.close();
  const fs::path manifest(a.out + ".manifest.json");
  run.output(path);
  run.output(manifest);
  run.write_manifest(manifest);
  out << "wrote " << cfg.kappa << "-step forecasts for " << cfg.stations << " stations to " << path.string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string data, checkpoint, report, forecasts;
};

const ObservationTable& pick_split(const SplitTables& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  return s.test;
}

int cmd_evaluate(const EvalArgs& a, Run& run, std::ostream& out) {
  const Model model = open_checkpoint(a.checkpoint, run);
  const auto table = load_data_dir(a.data, run);
  check_compatible(model, table);
  const auto& cfg = model.weights.config;
  run.config = {{"model", cfg.to_json()}, {"split", "test"}, {"window_stride", cfg.tau + cfg.kappa}};

  const auto split = chronological_split(table, cfg.tau, cfg.kappa);
  const auto& test = pick_split(split, "test");
  const auto windows = make_windows(model.stats.apply(test), cfg.tau, cfg.kappa, cfg.tau + cfg.kappa);
  if (windows.empty()) {
    throw DataError("the test split has " + std::to_string(test.steps()) + " steps, fewer than tau + kappa = " +
                    std::to_string(cfg.tau + cfg.kappa));
  }
  const Tensor pred = denormalize_forecasts(predict_windows(model.weights, model.graph, windows), model.stats);
  const Tensor truth = denormalize_forecasts(window_targets(windows), model.stats);
  const Tensor base = denormalize_forecasts(historical_average(windows), model.stats);
  const auto flags = window_sudden_flags(test, windows);
  const auto report = evaluate_metrics(pred, truth, flags, model.pollutants);

  json j = report.to_json();
  j["baseline_historical_average"] = evaluate_metrics(base, truth, flags, model.pollutants).to_json();
  j["split"] = {{"name", "test"},
                {"first_timestamp", format_iso8601(test.timestamps.front())},
                {"steps", test.steps()},
                {"window_stride", cfg.tau + cfg.kappa}};

  const fs::path path(a.report);
  const auto lock = lock_file(path);
  write_json_file(path, j);
  run.output(path);
  if (!a.forecasts.empty()) {
    std::ofstream os(a.forecasts);
    if (!os) throw DataError("cannot write " + a.forecasts);
    os << "station_id,pollutant,timestamp,predicted_value\n";
    const UnixSeconds step = hours_to_seconds(test.dt_hours);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const UnixSeconds t0 = windows[w].start_time + static_cast<UnixSeconds>(cfg.tau) * step;
      for (std::size_t n = 0; n < cfg.stations; ++n) {
        for (std::size_t k = 0; k < cfg.pollutants; ++k) {
          for (std::size_t h = 0; h < cfg.kappa; ++h) {
            os << test.stations[n].id << ',' << model.pollutants[k] << ','
               << format_iso8601(t0 + static_cast<UnixSeconds>(h) * step) << ','
               << format_double(pred.at({w, n, k, h})) << '\n';
          }
        }
      }
    }
    run.output(a.forecasts);
  }
  const fs::path manifest(a.report + ".manifest.json");
  run.output(manifest);
  run.write_manifest(manifest);
  out << "MAE " << format_double(report.overall.mae) << "  RMSE " << format_double(report.overall.rmse)
      << "  SMAPE " << format_double(report.overall.smape_percent()) << "% over " << windows.size()
      << " windows\n";
  return kExitOk;
}

struct ExportArgs {
  std::string checkpoint, data, out, split = "test";
  bool svg = true;
};

int cmd_export(const ExportArgs& a, Run& run, std::ostream& out) {
  const Model model = open_checkpoint(a.checkpoint, run);
  const auto table = load_data_dir(a.data, run);
  check_compatible(model, table);
  const auto& cfg = model.weights.config;
  run.config = {{"model", cfg.to_json()}, {"split", a.split}};

  const auto split = chronological_split(table, cfg.tau, cfg.kappa);
  const auto windows = make_windows(model.stats.apply(pick_split(split, a.split)), cfg.tau, cfg.kappa,
                                    cfg.tau + cfg.kappa);
  if (windows.empty()) throw DataError("the " + a.split + " split is shorter than tau + kappa");

  // Batch-weighted mean of per-batch maps.
  constexpr std::size_t kBatch = 32;
  CausalAttentionMap total;
  for (std::size_t s = 0; s < windows.size(); s += kBatch) {
    std::vector<const WindowSample*> batch;
    for (std::size_t i = s; i < std::min(windows.size(), s + kBatch); ++i) batch.push_back(&windows[i]);
    const auto r = forward(make_input(batch, cfg), model.graph, model.weights);
    auto part = causal_attention_map(r.attention, cfg);
    const double weight = static_cast<double>(batch.size()) / static_cast<double>(windows.size());
    if (total.values.empty()) {
      total = part;
      for (auto& v : total.values) v *= weight;
    } else {
      for (std::size_t i = 0; i < total.values.size(); ++i) total.values[i] += weight * part.values[i];
    }
  }
  const auto merged = merge_wind_pair(total, model.met_names);
  AttentionLabels labels;
  for (const auto& s : model.graph.stations) labels.station_ids.push_back(s.id);
  labels.pollutants = model.pollutants;
  labels.met_variables = merged.met_names;
  labels.dt_hours = model.dt_hours;

  const fs::path dir(a.out);
  const auto lock = lock_dir(dir);
  export_causal_attention_csv((dir / "causal_attention.csv").string(), merged.map, labels);
  run.output(dir / "causal_attention.csv");
  if (a.svg) {
    export_causal_attention_svg((dir / "causal_attention.svg").string(), merged.map, labels);
    run.output(dir / "causal_attention.svg");
  }
  run.output(dir / kManifestName);
  run.write_manifest(dir / kManifestName);
  out << "exported attention over " << windows.size() << " windows to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-station air pollutant forecasting with meteorological causal attention", "airpcm"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Cap on internal parallelism")->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate a synthetic dataset with planted lags");
  gen_cmd->add_option("--spec", gen.spec, "Synthetic spec JSON")->required();
  gen_cmd->add_option("--stations", gen.stations, "Override the station count");
  gen_cmd->add_option("--seed", gen.seed, "Override the spec seed");
  gen_cmd->add_option("--out", gen.out, "Output data directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", tr.data, "Data directory with stations.csv and observations.csv")->required();
  train_cmd->add_option("--config", tr.config, "Model config JSON");
  train_cmd->add_option("--train-config", tr.train_config, "Training config JSON");
  train_cmd->add_option("--out", tr.out, "Checkpoint directory")->required();
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--epochs", tr.epochs);
  train_cmd->add_option("--batch-size", tr.batch_size);
  train_cmd->add_option("--patience", tr.patience);
  train_cmd->add_option("--max-steps", tr.max_steps);
  train_cmd->add_option("--train-stride", tr.train_stride);
  train_cmd->add_option("--learning-rate", tr.learning_rate);

  PredictArgs pr;
  auto* predict_cmd = app.add_subcommand("predict", "Forecast kappa steps starting at a timestamp");
  predict_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  predict_cmd->add_option("--data", pr.data)->required();
  predict_cmd->add_option("--at", pr.at, "First forecast timestamp, YYYY-MM-DDTHH:MM:SSZ")->required();
  predict_cmd->add_option("--out", pr.out, "Forecast CSV")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the test split");
  eval_cmd->add_option("--data", ev.data)->required();
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--report", ev.report, "Metrics report JSON")->required();
  eval_cmd->add_option("--forecasts", ev.forecasts, "Optional forecast CSV");

  ExportArgs ex;
  auto* export_cmd = app.add_subcommand("export-causality", "Export the meteorology-to-pollutant attention map");
  export_cmd->add_option("--checkpoint", ex.checkpoint)->required();
  export_cmd->add_option("--data", ex.data)->required();
  export_cmd->add_option("--out", ex.out, "Output directory")->required();
  export_cmd->add_option("--split", ex.split)->check(CLI::IsMember({"train", "val", "test"}));
  export_cmd->add_flag("!--no-svg", ex.svg, "Skip the SVG heatmap");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  }

  Eigen::setNbThreads(static_cast<int>(threads));
  Run run;
  run.argv = args;
  try {
    if (gen_cmd->parsed()) {
      run.command = "gen-synthetic";
      return cmd_gen_synthetic(gen, run, out);
    }
    if (train_cmd->parsed()) {
      run.command = "train";
      return cmd_train(tr, run, out);
    }
    if (predict_cmd->parsed()) {
      run.command = "predict";
      return cmd_predict(pr, run, out);
    }
    if (eval_cmd->parsed()) {
      run.command = "evaluate";
      return cmd_evaluate(ev, run, out);
    }
    run.command = "export-causality";
    return cmd_export(ex, run, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NumericError& e) {
    err << "error: numeric failure: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const json::exception& e) {
    err << "error: malformed JSON content: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace airpcm
