#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ogm/autograd.hpp"

namespace ogm {

using ParamId = std::size_t;

// Named, ordered collection of trainable tensors. Order is the checkpoint order.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value);
  std::size_t size() const { return values_.size(); }
  const Tensor& operator[](ParamId id) const { return values_.at(id); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  void set(ParamId id, Tensor value);
  std::size_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// Parameters placed on a tape for one forward/backward pass.
class Binding {
 public:
  Binding(Tape& tape, const ParameterStore& store, bool requires_grad = true);
  Var operator[](ParamId id) const { return vars_.at(id); }
  Tape& tape() const { return *tape_; }
  std::vector<Tensor> gradients() const;

 private:
  Tape* tape_;
  std::vector<Var> vars_;
};

struct LinearParams {
  ParamId weight = 0;  // in × out
  ParamId bias = 0;    // 1 × out
};

struct MLPParams {
  std::vector<LinearParams> layers;

  std::size_t input_width(const ParameterStore& store) const;
  std::size_t output_width(const ParameterStore& store) const;
};

enum class LastLayerInit { kRandom, kZero };

// Affine layers of the given widths (widths.front() = input). He-uniform init.
MLPParams make_mlp(ParameterStore& store, const std::string& prefix,
                   const std::vector<std::size_t>& widths, std::mt19937_64& rng,
                   LastLayerInit last = LastLayerInit::kRandom);

LinearParams make_linear(ParameterStore& store, const std::string& prefix, std::size_t in,
                         std::size_t out, std::mt19937_64& rng);

// Affine layers with ReLU between them and none after the last.
Var mlp_apply(const Binding& params, const MLPParams& mlp, Var x);

}  // namespace ogm
