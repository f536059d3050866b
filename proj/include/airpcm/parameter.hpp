#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "airpcm/tensor.hpp"

namespace airpcm {

enum class InitKind { kXavierUniform, kZeros, kOnes };

struct InitSpec {
  InitKind kind = InitKind::kXavierUniform;
  std::size_t fan_in = 1;
  std::size_t fan_out = 1;
};

struct Parameter {
  std::string name;
  Tensor tensor;
  InitSpec init;
};

/// Ordered, name-unique collection of trainable tensors. Order is insertion
/// order and is what checkpoints and optimizers iterate over.
class ParameterSet {
 public:
  // Creates and initializes a parameter; throws on duplicate names.
  Tensor add(const std::string& name, Shape shape, InitSpec init, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& operator[](const std::string& name) const;
  Tensor& operator[](const std::string& name);

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t total_values() const;

  void zero_grad();
  // Deep copy with fresh leaves (no shared storage).
  ParameterSet clone() const;
  // Copies values from `other`, which must have identical names and shapes.
  void assign_from(const ParameterSet& other);

 private:
  std::vector<Parameter> items_;
  std::map<std::string, std::size_t> index_;
};

// Zeroes every parameter grad, backpropagates `loss`, and leaves a (possibly
// zero) grad on every parameter. The graph is consumed.
void backward(const Tensor& loss, ParameterSet& params);

}  // namespace airpcm
