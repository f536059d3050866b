#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "airpcm/error.hpp"

namespace airpcm {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major n-d array of doubles with optional reverse-mode gradient
/// tracking. Copies share storage: a Tensor is a handle onto a graph node.
class Tensor {
 public:
  Tensor();  // scalar zero, no tracking
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, double bound, std::mt19937_64& rng);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;

  std::span<const double> data() const { return node_->data; }
  // Writable view; only leaves may be written in place.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool has_grad() const { return !node_->grad.empty(); }
  // Gradient, or zeros if none accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad,
  // then frees the graph. `this` must be a scalar.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by operation implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic with numpy-style broadcasting.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// Unary maps.
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor elu(const Tensor& x);
Tensor gelu(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose_last(const Tensor& x);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// out[..., i, ...] = x[..., indices[i], ...] along `axis`; repeats allowed.
Tensor gather(const Tensor& x, int axis, const std::vector<std::size_t>& indices);

// Batched matrix product over the trailing two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

// Softmax along the last axis. The optional mask (entries 0/1, broadcastable
// to scores) is applied additively: score + (mask - 1) * 1e9.
Tensor softmax(const Tensor& scores);
Tensor masked_softmax(const Tensor& scores, const Tensor* mask);

// (x - mean) / sqrt(var + 1e-5) * gain + bias along the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEpsilon = 1e-5;

// x: ... x C_in x T, kernel: C_out x C_in x 1 x k_t (k_t odd). Zero-centered
// along time with edge-replicate padding of (k_t - 1) / 2.
Tensor conv2d(const Tensor& x, const Tensor& kernel);

// x: ... x d_in, weight: d_in x d_out, bias: d_out.
Tensor linear_embed(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64* rng);

// Throws NumericError naming `what` if x holds NaN/Inf.
void check_finite(const Tensor& x, const std::string& what);

// Largest |a_i - b_i|.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace airpcm
