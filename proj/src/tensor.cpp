#include "airpcm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace airpcm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<detail::Node>;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void check_finite_data(std::span<const double> data, const std::string& what) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
  }
}

// Builds the output tensor and, when any input is tracked, wires the
// backward closure into the graph.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(detail::Node&)> backward_fn, const char* op) {
#ifndef NDEBUG
  check_finite_data(data, std::string(op) + " output");
#else
  (void)op;
#endif
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool tracked = std::any_of(parents.begin(), parents.end(),
                                   [](const NodePtr& p) { return p->requires_grad; });
  if (tracked) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For every linear index of `out`, the linear index of the broadcast source.
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    stride[i + pad] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t linear = 0; linear < total; ++linear) {
    offsets[linear] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return offsets;
}

enum class BinaryOp { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op) {
  const auto& an = a.node();
  const auto& bn = b.node();
  const Shape out_shape = broadcast_shape(an->shape, bn->shape);
  const std::size_t total = numel(out_shape);
  const bool same = an->shape == bn->shape;
  std::vector<std::size_t> oa, ob;
  if (!same) {
    oa = broadcast_offsets(out_shape, an->shape);
    ob = broadcast_offsets(out_shape, bn->shape);
  }
  auto ia = [&](std::size_t i) { return same ? i : oa[i]; };
  auto ib = [&](std::size_t i) { return same ? i : ob[i]; };

  std::vector<double> out(total);
  const double* pa = an->data.data();
  const double* pb = bn->data.data();
  for (std::size_t i = 0; i < total; ++i) {
    const double x = pa[ia(i)];
    const double y = pb[ib(i)];
    out[i] = op == BinaryOp::kAdd ? x + y : op == BinaryOp::kSub ? x - y : x * y;
  }
  const char* name = op == BinaryOp::kAdd ? "add" : op == BinaryOp::kSub ? "sub" : "mul";
  return make_result(
      out_shape, std::move(out), {an, bn},
      [an, bn, op, same, oa = std::move(oa), ob = std::move(ob)](detail::Node& self) {
        const auto& g = self.grad;
        const std::size_t n = g.size();
        if (an->requires_grad) {
          auto& ga = an->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const double d = op == BinaryOp::kMul ? g[i] * bn->data[same ? i : ob[i]] : g[i];
            ga[same ? i : oa[i]] += d;
          }
        }
        if (bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (op == BinaryOp::kSub) d = -d;
            if (op == BinaryOp::kMul) d *= an->data[same ? i : oa[i]];
            gb[same ? i : ob[i]] += d;
          }
        }
      },
      name);
}

// Elementwise unary map; `deriv(x, y)` returns dy/dx.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D deriv, const char* name) {
  const auto& xn = x.node();
  std::vector<double> out(xn->data.size());
  std::transform(xn->data.begin(), xn->data.end(), out.begin(), f);
  auto result = make_result(xn->shape, std::move(out), {xn}, nullptr, name);
  if (result.requires_grad()) {
    result.node()->backward_fn = [xn, deriv](detail::Node& self) {
      auto& gx = xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        gx[i] += self.grad[i] * deriv(xn->data[i], self.data[i]);
      }
    };
  }
  return result;
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) { node_->data = {0.0}; }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("zero extent in shape " + to_string(shape));
  }
  if (airpcm::numel(shape) != data.size()) {
    throw ShapeError("shape " + to_string(shape) + " needs " + std::to_string(airpcm::numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = airpcm::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(airpcm::numel(shape));
  for (auto& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

std::size_t Tensor::dim(int axis) const { return shape()[normalize_axis(axis, rank())]; }

std::span<double> Tensor::mutable_data() {
  if (!node_->is_leaf()) throw GraphError("cannot write into a non-leaf tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + to_string(shape()));
  std::size_t offset = 0;
  std::size_t i = 0;
  for (std::size_t idx : index) {
    if (idx >= shape()[i]) throw ShapeError("index out of range for " + to_string(shape()));
    offset = offset * shape()[i] + idx;
    ++i;
  }
  return node_->data[offset];
}

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_->is_leaf()) throw GraphError("requires_grad can only be set on leaves");
  node_->requires_grad = value;
  return *this;
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw GraphError("backward needs a scalar loss, got shape " + to_string(shape()));
  }
  if (node_->consumed) {
    throw GraphError("graph already consumed by a previous backward; run a new forward");
  }
  if (!node_->requires_grad) throw GraphError("loss does not depend on any tracked tensor");

  // Iterative post-order DFS yields a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (n->backward_fn) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
      n->consumed = true;
    }
  }
  node_->consumed = true;
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

Tensor Tensor::clone() const {
  Tensor t(shape(), node_->data);
  t.node_->requires_grad = node_->requires_grad && node_->is_leaf();
  return t;
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::kAdd); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::kSub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryOp::kMul); }

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; },
      "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, [value](double x) { return x + value; }, [](double, double) { return 1.0; },
      "add_scalar");
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, "square");
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }, "abs");
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; },
      "tanh");
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }, "leaky_relu");
}

Tensor elu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; }, "elu");
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double a = 0.044715;
  return unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + a * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
      },
      "gelu");
}

Tensor sum(const Tensor& x) {
  const auto& xn = x.node();
  const double total = std::accumulate(xn->data.begin(), xn->data.end(), 0.0);
  return make_result(
      {}, {total}, {xn},
      [xn](detail::Node& self) {
        auto& gx = xn->ensure_grad();
        for (auto& g : gx) g += self.grad[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const auto& xn = x.node();
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(xn->shape, ax);
  Shape out_shape = xn->shape;
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* src = xn->data.data() + (o * s.extent + e) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return make_result(
      out_shape, std::move(out), {xn},
      [xn, s](detail::Node& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t e = 0; e < s.extent; ++e) {
            double* dst = gx.data() + (o * s.extent + e) * s.inner;
            const double* g = self.grad.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += g[i];
          }
        }
      },
      "sum_axis");
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum_axis(x, axis, keepdim), 1.0 / n);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  const auto& xn = x.node();
  return make_result(
      std::move(shape), xn->data, {xn},
      [xn](detail::Node& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
      },
      "reshape");
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& xn = x.node();
  const std::size_t rank = x.rank();
  if (axes.size() != rank) {
    throw ShapeError("permute axes count mismatch for " + to_string(x.shape()));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("invalid permutation for " + to_string(x.shape()));
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = s;
    s *= xn->shape[i];
  }
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = xn->shape[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  // src[i] is the input offset of output element i.
  const std::size_t total = x.numel();
  std::vector<std::size_t> src(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t linear = 0; linear < total; ++linear) {
    src[linear] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out_shape[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = xn->data[src[i]];
  return make_result(
      out_shape, std::move(out), {xn},
      [xn, src = std::move(src)](detail::Node& self) {
        auto& gx = xn->ensure_grad();
        for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += self.grad[i];
      },
      "permute");
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
  return permute(x, axes);
}

Tensor gather(const Tensor& x, int axis, const std::vector<std::size_t>& indices) {
  const auto& xn = x.node();
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(xn->shape, ax);
  if (indices.empty()) throw ShapeError("gather with no indices");
  for (std::size_t idx : indices) {
    if (idx >= s.extent) {
      throw ShapeError("gather index " + std::to_string(idx) + " out of range for axis extent " +
                       std::to_string(s.extent));
    }
  }
  Shape out_shape = xn->shape;
  out_shape[ax] = indices.size();
  const std::size_t m = indices.size();
  std::vector<double> out(s.outer * m * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* src = xn->data.data() + (o * s.extent + indices[i]) * s.inner;
      std::copy(src, src + s.inner, out.data() + (o * m + i) * s.inner);
    }
  }
  return make_result(
      out_shape, std::move(out), {xn},
      [xn, s, indices](detail::Node& self) {
        auto& gx = xn->ensure_grad();
        const std::size_t m = indices.size();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < m; ++i) {
            double* dst = gx.data() + (o * s.extent + indices[i]) * s.inner;
            const double* g = self.grad.data() + (o * m + i) * s.inner;
            for (std::size_t j = 0; j < s.inner; ++j) dst[j] += g[j];
          }
        }
      },
      "gather");
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t extent = x.dim(axis);
  if (length == 0 || start + length > extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis extent " + std::to_string(extent) + " of " +
                     to_string(x.shape()));
  }
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), start);
  return gather(x, axis, idx);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = parts[0].shape();
    if (a.size() != b.size()) {
      throw ShapeError("concat rank mismatch: " + to_string(a) + " vs " + to_string(b));
    }
    a[ax] = b[ax] = 0;
    if (a != b) {
      throw ShapeError("concat shape mismatch: " + to_string(p.shape()) + " vs " +
                       to_string(parts[0].shape()));
    }
    out_shape[ax] += p.shape()[ax];
    extents.push_back(p.shape()[ax]);
    nodes.push_back(p.node());
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::size_t base = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::size_t e = extents[k];
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = nodes[k]->data.data() + o * e * s.inner;
      std::copy(src, src + e * s.inner, out.data() + (o * s.extent + base) * s.inner);
    }
    base += e;
  }
  return make_result(
      out_shape, std::move(out), nodes,
      [nodes, extents, s](detail::Node& self) {
        std::size_t base = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const std::size_t e = extents[k];
          if (nodes[k]->requires_grad) {
            auto& g = nodes[k]->ensure_grad();
            for (std::size_t o = 0; o < s.outer; ++o) {
              const double* src = self.grad.data() + (o * s.extent + base) * s.inner;
              double* dst = g.data() + o * e * s.inner;
              for (std::size_t j = 0; j < e * s.inner; ++j) dst[j] += src[j];
            }
          }
          base += e;
        }
      },
      "concat");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = a.node();
  const auto& bn = b.node();
  if (a.rank() < 2 || b.rank() < 2 || a.shape().back() != b.shape()[b.rank() - 2]) {
    throw ShapeError("matmul shape mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  check_finite_data(an->data, "matmul lhs " + to_string(a.shape()));
  check_finite_data(bn->data, "matmul rhs " + to_string(b.shape()));
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch_out;
  try {
    batch_out = broadcast_shape(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Shape out_shape = batch_out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const std::size_t batches = numel(batch_out);
  std::vector<double> out(batches * m * n);

  // A plain weight matrix on the right folds every batch into one product.
  const bool fold = batch_b.empty() || numel(batch_b) == 1;
  const bool fold_a = fold && numel(batch_a) == batches;
  std::vector<std::size_t> oa, ob;
  if (!fold_a) {
    oa = broadcast_offsets(batch_out, batch_a);
    ob = broadcast_offsets(batch_out, batch_b);
  }
  if (fold_a) {
    MatMap(out.data(), static_cast<Eigen::Index>(batches * m), static_cast<Eigen::Index>(n))
        .noalias() = ConstMatMap(an->data.data(), static_cast<Eigen::Index>(batches * m),
                                 static_cast<Eigen::Index>(k)) *
                     ConstMatMap(bn->data.data(), static_cast<Eigen::Index>(k),
                                 static_cast<Eigen::Index>(n));
  } else {
    for (std::size_t i = 0; i < batches; ++i) {
      MatMap(out.data() + i * m * n, m, n).noalias() =
          ConstMatMap(an->data.data() + oa[i] * m * k, m, k) *
          ConstMatMap(bn->data.data() + ob[i] * k * n, k, n);
    }
  }
  return make_result(
      out_shape, std::move(out), {an, bn},
      [an, bn, m, k, n, batches, fold_a, oa = std::move(oa),
       ob = std::move(ob)](detail::Node& self) {
        const auto M = static_cast<Eigen::Index>(m);
        const auto K = static_cast<Eigen::Index>(k);
        const auto N = static_cast<Eigen::Index>(n);
        if (fold_a) {
          const auto rows = static_cast<Eigen::Index>(batches * m);
          ConstMatMap g(self.grad.data(), rows, N);
          if (an->requires_grad) {
            MatMap(an->ensure_grad().data(), rows, K).noalias() +=
                g * ConstMatMap(bn->data.data(), K, N).transpose();
          }
          if (bn->requires_grad) {
            MatMap(bn->ensure_grad().data(), K, N).noalias() +=
                ConstMatMap(an->data.data(), rows, K).transpose() * g;
          }
          return;
        }
        double* ga = an->requires_grad ? an->ensure_grad().data() : nullptr;
        double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        for (std::size_t i = 0; i < batches; ++i) {
          ConstMatMap g(self.grad.data() + i * m * n, M, N);
          if (ga) {
            MatMap(ga + oa[i] * m * k, M, K).noalias() +=
                g * ConstMatMap(bn->data.data() + ob[i] * k * n, K, N).transpose();
          }
          if (gb) {
            MatMap(gb + ob[i] * k * n, K, N).noalias() +=
                ConstMatMap(an->data.data() + oa[i] * m * k, M, K).transpose() * g;
          }
        }
      },
      "matmul");
}

Tensor softmax(const Tensor& scores) { return masked_softmax(scores, nullptr); }

Tensor masked_softmax(const Tensor& scores, const Tensor* mask) {
  const auto& sn = scores.node();
  if (scores.rank() == 0) throw ShapeError("softmax of a scalar");
  const std::size_t width = scores.shape().back();
  const std::size_t rows = scores.numel() / width;
  std::vector<std::size_t> mo;
  if (mask) {
    const Shape b = broadcast_shape(scores.shape(), mask->shape());
    if (b != scores.shape()) {
      throw ShapeError("mask " + to_string(mask->shape()) + " does not broadcast to scores " +
                       to_string(scores.shape()));
    }
    for (double v : mask->data()) {
      if (v != 0.0 && v != 1.0) throw ShapeError("softmax mask entries must be 0 or 1");
    }
    mo = broadcast_offsets(scores.shape(), mask->shape());
  }
  const double* md = mask ? mask->data().data() : nullptr;
  std::vector<double> out(scores.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = sn->data.data() + r * width;
    double* p = out.data() + r * width;
    double hi = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < width; ++j) {
      const double keep = md ? md[mo[r * width + j]] : 1.0;
      any = any || keep == 1.0;
      p[j] = s[j] + (keep - 1.0) * 1e9;
      hi = std::max(hi, p[j]);
    }
    if (!any) throw ShapeError("softmax row " + std::to_string(r) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      const double keep = md ? md[mo[r * width + j]] : 1.0;
      p[j] = keep == 1.0 ? std::exp(p[j] - hi) : 0.0;
      total += p[j];
    }
    for (std::size_t j = 0; j < width; ++j) p[j] /= total;
  }
  return make_result(
      scores.shape(), std::move(out), {sn},
      [sn, width, rows](detail::Node& self) {
        auto& gs = sn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* p = self.data.data() + r * width;
          const double* g = self.grad.data() + r * width;
          double dot = 0.0;
          for (std::size_t j = 0; j < width; ++j) dot += p[j] * g[j];
          double* dst = gs.data() + r * width;
          for (std::size_t j = 0; j < width; ++j) dst[j] += p[j] * (g[j] - dot);
        }
      },
      "softmax");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.rank() == 0) throw ShapeError("layer_norm of a scalar");
  const std::size_t width = x.shape().back();
  if (gain.numel() != width || bias.numel() != width) {
    throw ShapeError("layer_norm gain/bias " + to_string(gain.shape()) + "/" +
                     to_string(bias.shape()) + " do not match normalized axis of " +
                     to_string(x.shape()));
  }
  const auto& xn = x.node();
  const auto& gn = gain.node();
  const auto& bn = bias.node();
  const std::size_t rows = x.numel() / width;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = xn->data.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += v[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (v[j] - mu) * (v[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t j = 0; j < width; ++j) {
      const double h = (v[j] - mu) * inv_std[r];
      xhat[r * width + j] = h;
      out[r * width + j] = h * gn->data[j] + bn->data[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, width, rows, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node& self) {
        const double w = static_cast<double>(width);
        double* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
        double* gg = gn->requires_grad ? gn->ensure_grad().data() : nullptr;
        double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
        std::vector<double> dh(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* g = self.grad.data() + r * width;
          const double* h = xhat.data() + r * width;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < width; ++j) {
            if (gg) gg[j] += g[j] * h[j];
            if (gb) gb[j] += g[j];
            dh[j] = g[j] * gn->data[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
          }
          if (!gx) continue;
          mean_dh /= w;
          mean_dh_h /= w;
          for (std::size_t j = 0; j < width; ++j) {
            gx[r * width + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      },
      "layer_norm");
}

Tensor conv2d(const Tensor& x, const Tensor& kernel) {
  if (kernel.rank() != 4 || kernel.shape()[2] != 1) {
    throw ShapeError("conv2d kernel must be C_out x C_in x 1 x k_t, got " +
                     to_string(kernel.shape()));
  }
  if (x.rank() < 2) throw ShapeError("conv2d input must be ... x C_in x T, got " + to_string(x.shape()));
  const std::size_t c_out = kernel.shape()[0];
  const std::size_t c_in = kernel.shape()[1];
  const std::size_t kt = kernel.shape()[3];
  if (kt % 2 == 0) throw ShapeError("conv2d time kernel must be odd, got " + std::to_string(kt));
  if (x.shape()[x.rank() - 2] != c_in) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + " vs kernel " +
                     to_string(kernel.shape()));
  }
  const std::size_t steps = x.shape().back();
  const std::size_t batches = x.numel() / (c_in * steps);
  const long pad = static_cast<long>(kt / 2);
  // col[(c * kt + j) * T + t] = x[c, clamp(t + j - pad)]
  std::vector<std::size_t> src(kt * steps);
  for (std::size_t j = 0; j < kt; ++j) {
    for (std::size_t t = 0; t < steps; ++t) {
      const long at = std::clamp(static_cast<long>(t) + static_cast<long>(j) - pad, 0L,
                                 static_cast<long>(steps) - 1);
      src[j * steps + t] = static_cast<std::size_t>(at);
    }
  }
  const auto& xn = x.node();
  const auto& kn = kernel.node();
  const auto rows_k = static_cast<Eigen::Index>(c_in * kt);
  const auto T = static_cast<Eigen::Index>(steps);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = c_out;
  std::vector<double> out(batches * c_out * steps);
  std::vector<double> cols(batches * c_in * kt * steps);
  for (std::size_t b = 0; b < batches; ++b) {
    const double* xb = xn->data.data() + b * c_in * steps;
    double* col = cols.data() + b * c_in * kt * steps;
    for (std::size_t c = 0; c < c_in; ++c) {
      for (std::size_t j = 0; j < kt; ++j) {
        for (std::size_t t = 0; t < steps; ++t) {
          col[(c * kt + j) * steps + t] = xb[c * steps + src[j * steps + t]];
        }
      }
    }
    MatMap(out.data() + b * c_out * steps, static_cast<Eigen::Index>(c_out), T).noalias() =
        ConstMatMap(kn->data.data(), static_cast<Eigen::Index>(c_out), rows_k) *
        ConstMatMap(col, rows_k, T);
  }
  return make_result(
      out_shape, std::move(out), {xn, kn},
      [xn, kn, c_in, c_out, kt, steps, batches, src = std::move(src),
       cols = std::move(cols)](detail::Node& self) {
        const auto rows_k = static_cast<Eigen::Index>(c_in * kt);
        const auto T = static_cast<Eigen::Index>(steps);
        const auto CO = static_cast<Eigen::Index>(c_out);
        std::vector<double> dcol(c_in * kt * steps);
        for (std::size_t b = 0; b < batches; ++b) {
          ConstMatMap g(self.grad.data() + b * c_out * steps, CO, T);
          const double* col = cols.data() + b * c_in * kt * steps;
          if (kn->requires_grad) {
            MatMap(kn->ensure_grad().data(), CO, rows_k).noalias() +=
                g * ConstMatMap(col, rows_k, T).transpose();
          }
          if (xn->requires_grad) {
            MatMap(dcol.data(), rows_k, T).noalias() =
                ConstMatMap(kn->data.data(), CO, rows_k).transpose() * g;
            double* gx = xn->ensure_grad().data() + b * c_in * steps;
            for (std::size_t c = 0; c < c_in; ++c) {
              for (std::size_t j = 0; j < kt; ++j) {
                for (std::size_t t = 0; t < steps; ++t) {
                  gx[c * steps + src[j * steps + t]] += dcol[(c * kt + j) * steps + t];
                }
              }
            }
          }
        }
      },
      "conv2d");
}

Tensor linear_embed(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.shape()[0]) {
    throw ShapeError("linear_embed trailing dim mismatch: input " + to_string(x.shape()) +
                     " vs weight " + to_string(weight.shape()));
  }
  if (bias.numel() != weight.shape()[1]) {
    throw ShapeError("linear_embed bias " + to_string(bias.shape()) + " vs weight " +
                     to_string(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64* rng) {
  if (!training || p <= 0.0) return x;
  if (!rng) throw GraphError("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.numel());
  const double s = 1.0 / (1.0 - p);
  for (auto& m : mask) m = keep(*rng) ? s : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

void check_finite(const Tensor& x, const std::string& what) { check_finite_data(x.data(), what); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

}  // namespace airpcm
