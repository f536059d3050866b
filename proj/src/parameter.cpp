#include "airpcm/parameter.hpp"

#include <cmath>

namespace airpcm {

Tensor ParameterSet::add(const std::string& name, Shape shape, InitSpec init,
                          std::mt19937_64& rng) {
  if (contains(name)) throw Error("duplicate parameter name: " + name);
  Tensor t;
  switch (init.kind) {
    case InitKind::kZeros:
      t = Tensor::zeros(std::move(shape));
      break;
    case InitKind::kOnes:
      t = Tensor::full(std::move(shape), 1.0);
      break;
    case InitKind::kXavierUniform: {
      const double bound = std::sqrt(6.0 / static_cast<double>(init.fan_in + init.fan_out));
      t = Tensor::uniform(std::move(shape), bound, rng);
      break;
    }
  }
  t.set_requires_grad(true);
  index_[name] = items_.size();
  items_.push_back({name, t, init});
  return items_.back().tensor;
}

const Tensor& ParameterSet::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return items_[it->second].tensor;
}

Tensor& ParameterSet::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return items_[it->second].tensor;
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.tensor.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) p.tensor.zero_grad();
}

ParameterSet ParameterSet::clone() const {
  ParameterSet out;
  out.index_ = index_;
  out.items_.reserve(items_.size());
  for (const auto& p : items_) {
    Tensor t(p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()),
             true);
    out.items_.push_back({p.name, t, p.init});
  }
  return out;
}

void ParameterSet::assign_from(const ParameterSet& other) {
  if (other.items_.size() != items_.size()) throw Error("parameter set size mismatch");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& src = other.items_[i];
    auto& dst = items_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw ShapeError("parameter mismatch: " + src.name + " " + to_string(src.tensor.shape()) +
                       " vs " + dst.name + " " + to_string(dst.tensor.shape()));
    }
    auto out = dst.tensor.mutable_data();
    std::copy(src.tensor.data().begin(), src.tensor.data().end(), out.begin());
  }
}

void backward(const Tensor& loss, ParameterSet& params) {
  params.zero_grad();
  loss.backward();
  for (auto& p : params.items()) {
    if (!p.tensor.has_grad()) p.tensor.node()->ensure_grad();
  }
}

}  // namespace airpcm
