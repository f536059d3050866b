#include "airpcm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace airpcm {

namespace {

double scalar_of(const Tensor& y) {
  if (y.numel() != 1) {
    throw ShapeError("gradcheck needs a scalar function, got shape " + to_string(y.shape()));
  }
  return y.item();
}

}  // namespace

double finite_diff_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                             double step, std::size_t max_coords_per_leaf) {
  for (auto& leaf : leaves) {
    leaf.zero_grad();
    leaf.set_requires_grad(true);
  }
  const Tensor y = f();
  scalar_of(y);
  y.backward();

  double worst = 0.0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic = leaf.grad();
    auto values = leaf.mutable_data();
    const std::size_t n = values.size();
    const std::size_t probes = max_coords_per_leaf == 0 ? n : std::min(n, max_coords_per_leaf);
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t i = probes == n ? p : p * n / probes;
      const double saved = values[i];
      values[i] = saved + step;
      const double up = scalar_of(f());
      values[i] = saved - step;
      const double down = scalar_of(f());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    leaf.zero_grad();
  }
  return worst;
}

double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                             double step) {
  Tensor leaf = x.clone();
  return finite_diff_gradcheck([&] { return f(leaf); }, {leaf}, step);
}

}  // namespace airpcm
