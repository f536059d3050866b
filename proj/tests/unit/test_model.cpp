#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>

#include "../common/fixtures.hpp"
#include "airpcm/csv.hpp"
#include "airpcm/error.hpp"
#include "airpcm/gradcheck.hpp"
#include "airpcm/model.hpp"

using namespace airpcm;
using namespace airpcm::testing;
namespace fs = std::filesystem;

namespace {

double max_rel_diff(const Tensor& a, const Tensor& b) {
  double scale = 1e-12;
  for (double v : a.data()) scale = std::max(scale, std::fabs(v));
  return max_abs_diff(a, b) / scale;
}

// Slice [..., i, :] of a B x N x K x n_p x d tensor.
Tensor patch_slice(const Tensor& x, std::size_t i) { return slice(x, 3, i, 1); }

}  // namespace

TEST_CASE("config validation") {
  auto cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.patch_len = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.patch_stride = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.d_p = 9;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(cfg.merge_json({{"bogus", 1}}), ConfigError);

  AirPCMConfig defaults;
  CHECK(defaults.omega() == 24);
  defaults.tau = 12;
  CHECK(defaults.omega() == 12);
}

TEST_CASE("parameter names and shapes are a function of the config") {
  const auto a = init_weights(tiny_config(), 1);
  const auto b = init_weights(tiny_config(), 2);
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params.items()[i].name == b.params.items()[i].name);
    CHECK(a.params.items()[i].tensor.shape() == b.params.items()[i].tensor.shape());
  }
  CHECK(a.params.contains("mscm.pol.gat.weight"));
  CHECK(a.params.contains("mptc.wq"));
  CHECK(a.params.contains("deco.head.weight"));
}

TEST_CASE("forward shape contract") {
  std::mt19937_64 rng(5);
  AirPCMConfig cfg;
  cfg.stations = 4;
  cfg.pollutants = 3;
  cfg.meteorology = 3;
  cfg.k_neighbors = 2;
  const auto w = init_weights(cfg, 3);
  const auto graph = tiny_graph(4, 2, 9);
  const auto in = random_input(cfg, 2, rng);
  const auto r = forward(in, graph, w);
  CHECK(r.forecast.shape() == Shape{2, 4, 3, 24});
  CHECK(r.p_emb.shape() == Shape{2, 4, 3, 8, 64});
  CHECK(r.attention.shape() == Shape{2, 4, 4, 3 * 8, 3 * 24});

  const auto again = forward(in, graph, w);
  CHECK(max_abs_diff(r.forecast, again.forecast) == 0.0);

  // Unbatched MSCM keeps its input shape.
  const Tensor x = random_tensor({4, 3, 24}, rng);
  CHECK(mscm_forward(x, graph, w, Branch::kPollutant).shape() == x.shape());
  CHECK_THROWS_AS(mscm_forward(x, tiny_graph(5, 2, 1), w, Branch::kPollutant), ShapeError);
}

TEST_CASE("single station: GAT reduces to its self-transform") {
  std::mt19937_64 rng(2);
  const auto cfg = tiny_config(1, 2, 2);
  const auto w = init_weights(cfg, 4);
  const auto graph = build_station_graph({{"solo", 30, 110}}, 2);
  CHECK(graph.edges.empty());
  const Tensor h = random_tensor({2, 8, 1, cfg.d_h}, rng);
  const Tensor got = gat_forward(h, gat_mask(graph), w, "mscm.pol.gat.");
  const Tensor expected = elu(matmul(h, w.params["mscm.pol.gat.weight"]) + w.params["mscm.pol.gat.bias"]);
  CHECK(max_abs_diff(got, expected) < 1e-12);
  const auto in = random_input(cfg, 1, rng);
  CHECK_NOTHROW(forward(in, graph, w));
}

TEST_CASE("GAT mask is the symmetric closure with self-loops") {
  // Collinear, equally spaced: with k=1 both ends point at the middle and
  // the middle points at station 0 only.
  const auto graph = build_station_graph({{"a", 30, 110}, {"b", 30, 111}, {"c", 30, 112}}, 1);
  const Tensor m = gat_mask(graph);
  CHECK(std::vector<double>(m.data().begin(), m.data().end()) ==
        std::vector<double>{1, 1, 0, 1, 1, 1, 0, 1, 1});
}

TEST_CASE("station permutation equivariance") {
  std::mt19937_64 rng(8);
  const auto cfg = tiny_config(5, 2, 2);
  const auto w = init_weights(cfg, 6);
  const auto stations = random_stations(5, 12);
  const auto graph = build_station_graph(stations, 2);
  const auto in = random_input(cfg, 2, rng);
  const auto base = forward(in, graph, w);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pgraph = build_station_graph(permute_station_list(stations, perm), 2);
    ModelInput pin = in;
    pin.pollutants = permute_stations(in.pollutants, perm);
    pin.meteorology = permute_stations(in.meteorology, perm);
    const auto out = forward(pin, pgraph, w);
    CHECK(max_abs_diff(out.forecast, permute_stations(base.forecast, perm)) < 1e-9);
  }
}

TEST_CASE("patchify examples and count law") {
  AirPCMConfig cfg;
  CHECK(cfg.n_patches() == 8);
  CHECK(patchify(Tensor::zeros({24}), cfg).shape() == Shape{8, 6});

  cfg.tau = 6;
  cfg.patch_len = 6;
  cfg.patch_stride = 6;
  CHECK(cfg.n_patches() == 2);
  std::vector<double> ramp(6);
  std::iota(ramp.begin(), ramp.end(), 0.0);
  const Tensor p = patchify(Tensor({6}, ramp), cfg);
  CHECK(p.shape() == Shape{2, 6});
  CHECK(p.at({1, 0}) == 5.0);  // second patch starts in the padding

  cfg = AirPCMConfig{};
  const Tensor constant = patchify(Tensor::full({2, 24}, 3.5), cfg);
  for (double v : constant.data()) CHECK(v == 3.5);

  cfg.patch_len = 30;
  CHECK_THROWS_AS(patch_indices(cfg), ShapeError);

  // Independent count: starts 0, s, 2s, ... whose patch fits in tau + s padded steps.
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    AirPCMConfig c;
    c.tau = std::uniform_int_distribution<std::size_t>(1, 96)(rng);
    c.patch_len = std::uniform_int_distribution<std::size_t>(1, c.tau)(rng);
    c.patch_stride = std::uniform_int_distribution<std::size_t>(1, c.patch_len)(rng);
    std::size_t count = 0;
    for (std::size_t start = 0; start + c.patch_len <= c.tau + c.patch_stride; start += c.patch_stride) {
      ++count;
    }
    CHECK(patchify(Tensor::zeros({c.tau}), c).shape() == Shape{count, c.patch_len});
  }
}

TEST_CASE("embed_patches examples") {
  std::mt19937_64 rng(3);
  const auto cfg = tiny_config();
  auto w = init_weights(cfg, 2);
  const auto in = random_input(cfg, 1, rng);
  const Tensor patches = patchify(in.pollutants, cfg);
  const Tensor e = embed_patches(patches, in.time_features, w);
  CHECK(e.shape() == Shape{1, 3, 2, cfg.n_patches(), cfg.d_p});

  // Identical content at two positions still differs through the position term.
  const Tensor same = Tensor::full(patches.shape(), 0.7);
  const Tensor tf = Tensor::full(in.time_features.shape(), 0.5);
  const Tensor es = embed_patches(same, tf, w);
  CHECK(max_abs_diff(patch_slice(es, 0), patch_slice(es, 1)) > 1e-3);

  for (const char* name : {"pe.patch.weight", "pe.patch.bias", "pe.pos.weight", "pe.time.weight"}) {
    for (auto& v : w.params[name].mutable_data()) v = 0.0;
  }
  const Tensor z = embed_patches(patches, in.time_features, w);
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("patch time features") {
  AirPCMConfig cfg;
  const Tensor f = patch_time_features(parse_iso8601("2024-01-17T21:00:00Z"), 3.0, cfg);
  CHECK(f.shape() == Shape{8, 4});
  CHECK(f.at({0, 0}) == doctest::Approx(2024.0 / 2000.0));
  CHECK(f.at({0, 2}) == doctest::Approx(17.0 / 31.0));
  CHECK(f.at({0, 3}) == doctest::Approx(21.0 / 24.0));
  CHECK(f.at({1, 2}) == doctest::Approx(18.0 / 31.0));  // 9 hours later
  CHECK(f.at({1, 3}) == doctest::Approx(6.0 / 24.0));
}

TEST_CASE("build_causal_mask examples") {
  AirPCMConfig cfg;  // tau = omega = 24, l_p = 6, s = 3
  const auto m = build_causal_mask(cfg);
  double ones = 0.0;
  for (std::size_t j = 0; j < m.cols; ++j) ones += m.at(0, j);
  CHECK(ones == 6.0);
  for (std::size_t j = 0; j < 6; ++j) CHECK(m.at(0, j) == 1.0);
  for (std::size_t j = 0; j < m.cols; ++j) CHECK(m.at(m.rows - 1, j) == 1.0);

  cfg.tau = 48;  // omega 24: early patches end before the window opens
  const auto f = build_causal_mask(cfg);
  CHECK(f.fallback[0]);
  CHECK(f.at(0, 0) == 1.0);
  CHECK(!f.fallback[f.rows - 1]);

  std::mt19937_64 rng(19);
  for (int t = 0; t < 200; ++t) {
    AirPCMConfig c;
    c.tau = std::uniform_int_distribution<std::size_t>(2, 64)(rng);
    c.patch_len = std::uniform_int_distribution<std::size_t>(1, c.tau)(rng);
    c.patch_stride = std::uniform_int_distribution<std::size_t>(1, c.patch_len)(rng);
    c.causal_window = std::uniform_int_distribution<std::size_t>(1, c.tau)(rng);
    const auto mk = build_causal_mask(c);
    for (std::size_t i = 0; i < mk.rows; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < mk.cols; ++j) {
        row += mk.at(i, j);
        if (i + 1 < mk.rows && mk.at(i, j) == 1.0 && !mk.fallback[i]) CHECK(mk.at(i + 1, j) == 1.0);
      }
      CHECK(row >= 1.0);
    }
  }
}

TEST_CASE("mptc masked positions do not reach their patch") {
  std::mt19937_64 rng(21);
  const auto cfg = tiny_config();
  const auto w = init_weights(cfg, 7);
  const auto mask = build_causal_mask(cfg);
  const Tensor p_emb = random_tensor({2, 3, 2, cfg.n_patches(), cfg.d_p}, rng);
  const Tensor m = random_tensor({2, 3, 2, cfg.omega()}, rng);
  const auto base = mptc_forward(p_emb, m, mask, w);

  const auto a = base.attention.data();
  const std::size_t row_len = base.attention.shape().back();
  for (std::size_t r = 0; r < base.attention.numel() / row_len; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < row_len; ++j) s += a[r * row_len + j];
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }

  for (std::size_t i = 0; i < mask.rows; ++i) {
    for (std::size_t j = 0; j < mask.cols; ++j) {
      if (mask.at(i, j) == 1.0) continue;
      for (std::size_t c = 0; c < 2; ++c) {
        Tensor mp = m.clone();
        for (std::size_t b = 0; b < 2; ++b) {
          for (std::size_t n = 0; n < 3; ++n) {
            mp.mutable_data()[((b * 3 + n) * 2 + c) * cfg.omega() + j] += 10.0;
          }
        }
        const auto r = mptc_forward(p_emb, mp, mask, w);
        CHECK(max_abs_diff(patch_slice(r.p_mcam, i), patch_slice(base.p_mcam, i)) < 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(mptc_forward(p_emb, slice(m, -1, 0, 4), mask, w), ShapeError);
}

TEST_CASE("mptc with a single met key gives the same output for every patch") {
  std::mt19937_64 rng(4);
  auto cfg = tiny_config(2, 2, 1);
  cfg.causal_window = 1;
  const auto w = init_weights(cfg, 3);
  const Tensor p_emb = random_tensor({1, 2, 2, cfg.n_patches(), cfg.d_p}, rng);
  const Tensor m = random_tensor({1, 2, 1, 1}, rng);
  const auto r = mptc_forward(p_emb, m, build_causal_mask(cfg), w);
  for (std::size_t i = 1; i < cfg.n_patches(); ++i) {
    CHECK(max_abs_diff(patch_slice(r.p_mcam, i), patch_slice(r.p_mcam, 0)) < 1e-12);
  }
  // Closed form: the value of the lone key, projected by W_v then W_o.
  const auto& p = w.params;
  const Tensor p_met = matmul(reshape(m, {1, 2, 1, 1, 1}), p["mptc.met.weight"]) + p["mptc.met.bias"] +
                       p["mptc.var_embed"] + p["mptc.lag_embed"];
  const Tensor expected = matmul(matmul(reshape(p_met, {1, 2, 1, cfg.d_p}), p["mptc.wv"]), p["mptc.wo"]);
  CHECK(max_abs_diff(reshape(patch_slice(slice(r.p_mcam, 2, 0, 1), 0), {1, 2, 1, cfg.d_p}), expected) < 1e-12);
}

TEST_CASE("end-to-end: met perturbations reach only patches that may see them") {
  std::mt19937_64 rng(31);
  const auto cfg = tiny_config();
  const auto w = init_weights(cfg, 9);
  const auto graph = tiny_graph(3, 2, 5);
  const auto in = random_input(cfg, 1, rng);
  const auto base = forward(in, graph, w);
  const auto mask = build_causal_mask(cfg);
  // Two centred 1x3 convolutions spread a met step over +-2 neighbours.
  const std::size_t reach = 2;
  for (std::size_t t = 0; t < cfg.tau; ++t) {
    ModelInput pin = in;
    pin.meteorology = in.meteorology.clone();
    for (std::size_t n = 0; n < 3; ++n) pin.meteorology.mutable_data()[(n * 2 + 1) * cfg.tau + t] += 5.0;
    const auto r = forward(pin, graph, w);
    for (std::size_t i = 0; i < mask.rows; ++i) {
      const double d = max_abs_diff(patch_slice(r.p_mcam, i), patch_slice(base.p_mcam, i));
      if (mask.last_step[i] + reach < t) CHECK(d < 1e-9);
      if (mask.last_step[i] >= t) CHECK(d > 0.0);
    }
    CHECK(max_abs_diff(r.p_emb, base.p_emb) == 0.0);
  }
}

TEST_CASE("zeroing one output head zeroes only that pollutant") {
  std::mt19937_64 rng(13);
  const auto cfg = tiny_config();
  auto w = init_weights(cfg, 5);
  const auto graph = tiny_graph(3, 2, 5);
  const auto in = random_input(cfg, 2, rng);
  const Tensor before = forward(in, graph, w).forecast;
  const std::size_t flat = cfg.n_patches() * cfg.d_p;
  auto hw = w.params["deco.head.weight"].mutable_data();
  std::fill(hw.begin() + static_cast<std::ptrdiff_t>(flat * cfg.kappa), hw.end(), 0.0);
  auto hb = w.params["deco.head.bias"].mutable_data();
  std::fill(hb.begin() + static_cast<std::ptrdiff_t>(cfg.kappa), hb.end(), 0.0);
  const Tensor after = forward(in, graph, w).forecast;
  CHECK(max_abs_diff(slice(after, 2, 0, 1), slice(before, 2, 0, 1)) == 0.0);
  const Tensor zeroed = slice(after, 2, 1, 1);
  for (double v : zeroed.data()) CHECK(v == 0.0);
}

TEST_CASE("sub-block gradient checks") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    const auto cfg = tiny_config();
    auto w = init_weights(cfg, seed + 100);
    const auto graph = tiny_graph(3, 2, seed);
    auto in = random_input(cfg, 1, rng);
    std::vector<Tensor> params;
    for (auto& p : w.params.items()) params.push_back(p.tensor);

    auto leaves_with = [&](const std::string& prefix, std::vector<Tensor> extra) {
      for (auto& p : w.params.items()) {
        if (p.name.rfind(prefix, 0) == 0) extra.push_back(p.tensor);
      }
      return extra;
    };

    SUBCASE("mscm pollutant branch") {
      Tensor x = in.pollutants.clone().set_requires_grad(true);
      const Tensor proj = random_tensor(x.shape(), rng);
      auto f = [&] { return sum(mscm_forward(x, graph, w, Branch::kPollutant) * proj); };
      CHECK(finite_diff_gradcheck(f, leaves_with("mscm.pol.", {x}), 1e-5, 6) < 1e-4);
    }
    SUBCASE("mscm meteorology branch") {
      Tensor x = in.meteorology.clone().set_requires_grad(true);
      const Tensor proj = random_tensor(x.shape(), rng);
      auto f = [&] { return sum(mscm_forward(x, graph, w, Branch::kMeteorology) * proj); };
      CHECK(finite_diff_gradcheck(f, leaves_with("mscm.met.", {x}), 1e-5, 6) < 1e-4);
    }
    SUBCASE("patch embedding") {
      Tensor x = in.pollutants.clone().set_requires_grad(true);
      auto f = [&] {
        const Tensor e = embed_patches(patchify(x, cfg), in.time_features, w);
        return sum(square(e));
      };
      CHECK(finite_diff_gradcheck(f, leaves_with("pe.", {x}), 1e-5, 6) < 1e-4);
    }
    SUBCASE("mptc") {
      Tensor p_emb = random_tensor({1, 3, 2, cfg.n_patches(), cfg.d_p}, rng).set_requires_grad(true);
      Tensor m = random_tensor({1, 3, 2, cfg.omega()}, rng).set_requires_grad(true);
      const auto mask = build_causal_mask(cfg);
      const Tensor proj = random_tensor(p_emb.shape(), rng);
      auto f = [&] { return sum(mptc_forward(p_emb, m, mask, w).p_mcam * proj); };
      CHECK(finite_diff_gradcheck(f, leaves_with("mptc.", {p_emb, m}), 1e-5, 6) < 1e-4);
    }
    SUBCASE("deco") {
      Tensor a = random_tensor({1, 3, 2, cfg.n_patches(), cfg.d_p}, rng).set_requires_grad(true);
      Tensor b = random_tensor({1, 3, 2, cfg.n_patches(), cfg.d_p}, rng).set_requires_grad(true);
      const Tensor proj = random_tensor({1, 3, 2, cfg.kappa}, rng);
      auto f = [&] { return sum(deco_forward(a, b, w) * proj); };
      CHECK(finite_diff_gradcheck(f, leaves_with("deco.", {a, b}), 1e-5, 6) < 1e-4);
    }
    SUBCASE("full forward") {
      const Tensor proj = random_tensor({1, 3, 2, cfg.kappa}, rng);
      auto f = [&] { return sum(forward(in, graph, w).forecast * proj); };
      CHECK(finite_diff_gradcheck(f, params, 1e-5, 2) < 1e-4);
    }
  }
}

TEST_CASE("every parameter receives gradient") {
  std::mt19937_64 rng(17);
  const auto cfg = tiny_config();
  auto w = init_weights(cfg, 1);
  const auto graph = tiny_graph(3, 2, 1);
  const auto in = random_input(cfg, 2, rng);
  const Tensor target = random_tensor({2, 3, 2, cfg.kappa}, rng);
  const Tensor loss = mean(abs(forward(in, graph, w).forecast - target));
  backward(loss, w.params);
  for (const auto& p : w.params.items()) {
    double norm = 0.0;
    for (double g : p.tensor.grad()) norm += g * g;
    INFO(p.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("dropout is active only in training") {
  std::mt19937_64 rng(1);
  auto cfg = tiny_config();
  cfg.dropout = 0.3;
  const auto w = init_weights(cfg, 1);
  const auto graph = tiny_graph(3, 2, 1);
  const auto in = random_input(cfg, 1, rng);
  const Tensor eval1 = forward(in, graph, w).forecast;
  const Tensor eval2 = forward(in, graph, w).forecast;
  CHECK(max_abs_diff(eval1, eval2) == 0.0);
  std::mt19937_64 drop_rng(2);
  const Tensor train = forward(in, graph, w, {true, &drop_rng}).forecast;
  CHECK(max_abs_diff(eval1, train) > 0.0);
}

TEST_CASE("causal attention map sums to one per station and pollutant") {
  std::mt19937_64 rng(6);
  const auto cfg = tiny_config();
  const auto w = init_weights(cfg, 2);
  const auto graph = tiny_graph(3, 2, 2);
  const auto r = forward(random_input(cfg, 3, rng), graph, w);
  const auto map = causal_attention_map(r.attention, cfg);
  CHECK(map.stations == 3);
  CHECK(map.pollutants == 2);
  CHECK(map.variables == 2);
  CHECK(map.omega == cfg.omega());
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t k = 0; k < 2; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < map.omega; ++j) {
          CHECK(map.at(n, k, c, j) >= 0.0);
          s += map.at(n, k, c, j);
        }
      }
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("causal attention map measures lag behind each patch") {
  // One patch row attending fully to position j sits at lag e_i - (tau - omega + j).
  auto cfg = tiny_config(1, 1, 1);
  const auto mask = build_causal_mask(cfg);  // e = 3, 5, 7, 7
  std::vector<double> a(mask.rows * mask.cols, 0.0);
  for (std::size_t i = 0; i < mask.rows; ++i) a[i * mask.cols + (mask.last_step[i] - 2)] = 1.0;
  const auto map = causal_attention_map(Tensor({1, 1, 1, mask.rows, mask.cols}, a), cfg);
  CHECK(map.mean_lag(0, 0) == doctest::Approx(2.0));
  CHECK(map.at(0, 0, 0, cfg.omega() - 3) == doctest::Approx(1.0));
}

TEST_CASE("attention export") {
  const fs::path dir = fs::temp_directory_path() / "airpcm_export_test";
  fs::create_directories(dir);
  CausalAttentionMap map{2, 1, 3, 4, std::vector<double>(2 * 3 * 4, 1.0 / 12.0)};
  const std::vector<std::string> names{"temperature", kWindDirectionSin, kWindDirectionCos};
  const auto merged = merge_wind_pair(map, names);
  CHECK(merged.met_names == std::vector<std::string>{"temperature", "wind_direction"});
  AttentionLabels labels{{"A", "B"}, {"pm25"}, merged.met_names, 3.0};
  export_causal_attention_csv((dir / "a.csv").string(), merged.map, labels);
  const auto csv = read_csv((dir / "a.csv").string());
  CHECK(csv.header == std::vector<std::string>{"station_id", "pollutant", "met_variable", "lag_hours", "weight"});
  CHECK(csv.rows.size() == 2 * 1 * 2 * 4);
  double group = 0.0;
  std::set<std::string> lags;
  for (const auto& row : csv.rows) {
    if (row[0] == "A") group += parse_double(row[4], "weight");
    lags.insert(row[3]);
  }
  CHECK(std::fabs(group - 1.0) < 1e-5);
  CHECK(lags == std::set<std::string>{"0", "3", "6", "9"});

  // Uniform attention renders as a flat heatmap.
  CausalAttentionMap flat{1, 1, 2, 5, std::vector<double>(10, 0.1)};
  export_causal_attention_svg((dir / "a.svg").string(), flat, {{"A"}, {"pm25"}, {"t", "p"}, 1.0});
  std::ifstream in(dir / "a.svg");
  const std::string svg((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::set<std::string> fills;
  const std::regex fill("fill=\"(#[0-9a-f]{6})\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), fill); it != std::sregex_iterator(); ++it) {
    fills.insert((*it)[1]);
  }
  CHECK(fills.size() == 1);

  CHECK_THROWS_AS(export_causal_attention_csv((dir / "b.csv").string(), merged.map,
                                              {{"A"}, {"pm25"}, merged.met_names, 3.0}),
                  ShapeError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = fs::temp_directory_path() / "airpcm_ckpt_test";
  fs::remove_all(dir);
  std::mt19937_64 rng(23);
  const auto cfg = tiny_config();
  const auto w = init_weights(cfg, 77);
  const auto graph = tiny_graph(3, 2, 3);
  const auto in = random_input(cfg, 2, rng);
  save_checkpoint(dir.string(), w, {{"note", "test"}});
  const auto loaded = load_checkpoint(dir.string());
  CHECK(loaded.manifest.at("note") == "test");
  CHECK(loaded.weights.config.to_json() == cfg.to_json());
  const Tensor a = forward(in, graph, w).forecast;
  const Tensor b = forward(in, graph, loaded.weights).forecast;
  CHECK(max_rel_diff(a, b) < 1e-5);

  // Saving the loaded weights reproduces the same bytes.
  const std::string digest = loaded.manifest.at("weights_sha256");
  save_checkpoint((dir / "again").string(), loaded.weights, {{"note", "test"}});
  CHECK(load_checkpoint((dir / "again").string()).manifest.at("weights_sha256") == digest);

  {
    std::fstream f(dir / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_checkpoint(dir.string()), DataError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing").string()), DataError);
  fs::remove_all(dir);
}
