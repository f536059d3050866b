#include <doctest.h>

#include <cmath>
#include <limits>

#include "../common/fixtures.hpp"
#include "airpcm/error.hpp"
#include "airpcm/gradcheck.hpp"
#include "airpcm/train.hpp"

using namespace airpcm;
using namespace airpcm::testing;

namespace {

struct Fixture {
  AirPCMConfig cfg = tiny_config();
  StationGraph graph = tiny_graph(3, 2, 4);
  NormalizedSplits norm;
  std::vector<WindowSample> train, val;

  Fixture() {
    SyntheticSpec spec;
    spec.stations = 3;
    spec.pollutants = 2;
    spec.meteorology = 2;
    spec.steps = 240;
    spec.window = 8;
    spec.lag_table = {{2, 0}, {0, 3}};
    spec.coeff_table = {{1.0, 0.0}, {0.0, 1.0}};
    spec.seed = 5;
    const auto table = generate_synthetic(spec, graph);
    const auto split = chronological_split(table, cfg.tau, cfg.kappa);
    norm = fit_apply_normalizer(split.train, {split.val});
    train = make_windows(norm.train, cfg.tau, cfg.kappa, 1);
    val = make_windows(norm.others[0], cfg.tau, cfg.kappa, cfg.tau + cfg.kappa);
  }
};

}  // namespace

TEST_CASE("loss_mae examples") {
  const Tensor x({2, 2}, {1, 2, 3, 4});
  CHECK(loss_mae(x, x).item() == 0.0);
  CHECK(loss_mae(x + Tensor::scalar(1.0), x).item() == 1.0);
  CHECK_THROWS_AS(loss_mae(x, Tensor::zeros({4})), ShapeError);

  Tensor p = Tensor({4}, {0.5, -2.0, 3.0, 1.0}).set_requires_grad(true);
  const Tensor t({4}, {0.0, 0.0, 4.0, 0.0});
  loss_mae(p, t).backward();
  CHECK(p.grad() == std::vector<double>{0.25, -0.25, -0.25, 0.25});
  CHECK(finite_diff_gradcheck([&](const Tensor& v) { return loss_mae(v, t); }, p) < 1e-6);
}

TEST_CASE("adam_step examples") {
  std::mt19937_64 rng(1);
  TrainConfig cfg;
  SUBCASE("zero gradient leaves weights unchanged") {
    ParameterSet ps;
    Tensor a = ps.add("a", {3}, {}, rng);
    const std::vector<double> before(a.data().begin(), a.data().end());
    a.node()->ensure_grad();
    AdamState st;
    adam_step(ps, st, cfg, 1);
    CHECK(std::vector<double>(a.data().begin(), a.data().end()) == before);
  }
  SUBCASE("first step moves by lr times the sign") {
    ParameterSet ps;
    Tensor a = ps.add("a", {2}, {InitKind::kZeros, 1, 1}, rng);
    a.node()->ensure_grad() = {0.5, -2.0};
    AdamState st;
    adam_step(ps, st, cfg, 1);
    CHECK(a.data()[0] == doctest::Approx(-1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
    CHECK(a.data()[1] == doctest::Approx(1e-3 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("global norm 50 is clipped to 5 before the moments") {
    ParameterSet ps;
    Tensor a = ps.add("a", {2}, {InitKind::kZeros, 1, 1}, rng);
    a.node()->ensure_grad() = {30.0, 40.0};
    AdamState st;
    adam_step(ps, st, cfg, 1);
    CHECK(st.m[0][0] == doctest::Approx(0.1 * 3.0).epsilon(1e-12));
    CHECK(st.m[0][1] == doctest::Approx(0.1 * 4.0).epsilon(1e-12));
    CHECK(st.v[0][1] == doctest::Approx(0.001 * 16.0).epsilon(1e-12));
  }
  SUBCASE("missing gradient") {
    ParameterSet ps;
    ps.add("a", {2}, {}, rng);
    AdamState st;
    CHECK_THROWS_AS(adam_step(ps, st, cfg, 1), GraphError);
  }
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.merge_json({{"learning_rate", 0.01}, {"betas", {0.8, 0.99}}, {"patience", 2}});
  CHECK(c.learning_rate == 0.01);
  CHECK(c.beta1 == 0.8);
  CHECK(c.to_json()["patience"] == 2);
  CHECK_THROWS_AS(c.merge_json({{"lr", 1}}), ConfigError);
  c.patience = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training is deterministic and improves validation error") {
  Fixture f;
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.batch_size = 8;
  tc.seed = 9;
  tc.learning_rate = 3e-3;
  const auto w0 = init_weights(f.cfg, 2);
  const double before = windows_mae(w0, f.graph, f.val);
  const auto a = train(w0, f.graph, f.train, f.val, tc);
  const auto b = train(w0, f.graph, f.train, f.val, tc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_mae == b.log[i].val_mae);
  }
  for (std::size_t i = 0; i < a.best.params.size(); ++i) {
    const auto& pa = a.best.params.items()[i].tensor;
    const auto& pb = b.best.params.items()[i].tensor;
    CHECK(max_abs_diff(pa, pb) == 0.0);
  }
  CHECK(windows_mae(a.best, f.graph, f.val) < before);
  CHECK(windows_mae(a.best, f.graph, f.val) ==
        doctest::Approx(a.log[a.best_epoch - 1].val_mae).epsilon(1e-12));
}

TEST_CASE("early stopping returns the epoch-1 weights when validation only worsens") {
  Fixture f;
  TrainConfig tc;
  tc.max_epochs = 20;
  tc.patience = 3;
  tc.batch_size = 32;
  double fake = 1.0;
  ParameterSet first;
  const auto validator = [&](const AirPCMWeights& w) {
    if (fake == 1.0) first = w.params.clone();
    return fake += 1.0;
  };
  const auto r = train(init_weights(f.cfg, 1), f.graph, f.train, {}, tc, validator);
  CHECK(r.log.size() == 1 + tc.patience);
  CHECK(r.best_epoch == 1);
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(max_abs_diff(first.items()[i].tensor, r.best.params.items()[i].tensor) == 0.0);
  }
}

TEST_CASE("non-finite training loss raises a divergence error") {
  Fixture f;
  auto w = init_weights(f.cfg, 1);
  for (auto& v : w.params["deco.head.bias"].mutable_data()) v = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.patience = 1;
  CHECK_THROWS_AS(train(w, f.graph, f.train, f.val, tc), DivergenceError);
}

TEST_CASE("historical average and denormalisation") {
  Fixture f;
  const Tensor h = historical_average(f.val);
  CHECK(h.shape() == Shape{f.val.size(), 3, 2, f.cfg.kappa});
  double m = 0.0;
  for (std::size_t t = 0; t < f.cfg.tau; ++t) m += f.val[0].past_pollutants(1, 0, t);
  CHECK(h.at({0, 1, 0, 3}) == doctest::Approx(m / static_cast<double>(f.cfg.tau)));

  const Tensor z = window_targets(f.val);
  const Tensor phys = denormalize_forecasts(z, f.norm.stats);
  const auto back = f.norm.stats.invert(f.norm.others[0]);
  const auto& w0 = f.val[0];
  CHECK(phys.at({0, 2, 1, 0}) ==
        doctest::Approx(back.pollutants(2, 1, w0.start_index - back.origin + f.cfg.tau)).epsilon(1e-12));
}

TEST_CASE("window sudden-change flags follow the target steps") {
  Fixture f;
  auto phys = f.norm.stats.invert(f.norm.others[0]);
  for (auto& v : phys.pollutants.values) v = 80.0;
  const auto& w0 = f.val[0];
  const std::size_t target = w0.start_index - phys.origin + f.cfg.tau + 1;
  phys.pollutants(2, 0, target + 1) = 150.0;  // pm25 jumps right after target step 1 at station 2
  const auto flags = window_sudden_flags(phys, f.val);
  CHECK(flags.size() == f.val.size() * 3 * f.cfg.kappa);
  CHECK(flags[(0 * 3 + 2) * f.cfg.kappa + 1]);
  CHECK(flags[(0 * 3 + 2) * f.cfg.kappa + 2]);  // 150 -> 80 also moves by more than 20
  CHECK(!flags[(0 * 3 + 1) * f.cfg.kappa + 1]);
}
