#pragma once

#include <functional>
#include <vector>

#include "airpcm/tensor.hpp"

namespace airpcm {

// Max over coordinates of |analytic - central difference| / max(1, |analytic|, |numeric|).
// `f` must return a scalar. `x` is treated as a leaf; its values are restored.
double finite_diff_gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                             double step = 1e-5);

// Same check over leaves that `f` closes over. Each leaf is perturbed in
// place and restored. When `max_coords_per_leaf` is nonzero, only that many
// evenly spaced coordinates of each leaf are probed.
double finite_diff_gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                             double step = 1e-5, std::size_t max_coords_per_leaf = 0);

}  // namespace airpcm
