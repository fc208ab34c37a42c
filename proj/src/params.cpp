#include "ogm/params.hpp"

#include <cmath>

namespace ogm {

ParamId ParameterStore::add(std::string name, Tensor value) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return values_.size() - 1;
}

void ParameterStore::set(ParamId id, Tensor value) {
  if (value.shape() != values_.at(id).shape()) {
    throw DimensionError("parameter " + names_[id] + ": shape " + shape_string(value.shape()) +
                         " does not match " + shape_string(values_[id].shape()));
  }
  values_[id] = std::move(value);
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

Binding::Binding(Tape& tape, const ParameterStore& store, bool requires_grad) : tape_(&tape) {
  vars_.reserve(store.size());
  for (ParamId i = 0; i < store.size(); ++i) vars_.push_back(tape.leaf(store[i], requires_grad));
}

std::vector<Tensor> Binding::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (const Var& v : vars_) out.push_back(tape_->grad_tensor(v));
  return out;
}

std::size_t MLPParams::input_width(const ParameterStore& store) const {
  return store[layers.front().weight].rows();
}

std::size_t MLPParams::output_width(const ParameterStore& store) const {
  return store[layers.back().weight].cols();
}

LinearParams make_linear(ParameterStore& store, const std::string& prefix, std::size_t in,
                         std::size_t out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out);
  for (double& x : w) x = u(rng);
  LinearParams p;
  p.weight = store.add(prefix + ".weight", Tensor::matrix(in, out, std::move(w)));
  p.bias = store.add(prefix + ".bias", Tensor::zeros(1, out));
  return p;
}

MLPParams make_mlp(ParameterStore& store, const std::string& prefix,
                   const std::vector<std::size_t>& widths, std::mt19937_64& rng, LastLayerInit last) {
  if (widths.size() < 2) throw DimensionError("make_mlp: need at least input and output widths");
  MLPParams mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::string name = prefix + "." + std::to_string(l);
    const bool is_last = l + 2 == widths.size();
    if (is_last && last == LastLayerInit::kZero) {
      LinearParams p;
      p.weight = store.add(name + ".weight", Tensor::zeros(widths[l], widths[l + 1]));
      p.bias = store.add(name + ".bias", Tensor::zeros(1, widths[l + 1]));
      mlp.layers.push_back(p);
    } else {
      // He-uniform for ReLU-fed layers.
      const double bound = std::sqrt(6.0 / static_cast<double>(widths[l]));
      std::uniform_real_distribution<double> u(-bound, bound);
      std::vector<double> w(widths[l] * widths[l + 1]);
      for (double& x : w) x = u(rng) * (is_last ? std::sqrt(0.5) : 1.0);
      LinearParams p;
      p.weight = store.add(name + ".weight", Tensor::matrix(widths[l], widths[l + 1], std::move(w)));
      p.bias = store.add(name + ".bias", Tensor::zeros(1, widths[l + 1]));
      mlp.layers.push_back(p);
    }
  }
  return mlp;
}

Var mlp_apply(const Binding& params, const MLPParams& mlp, Var x) {
  if (mlp.layers.empty()) return x;
  const std::size_t in = params[mlp.layers.front().weight].rows();
  if (x.cols() != in) {
    throw DimensionError("mlp_apply: input width " + std::to_string(x.cols()) +
                         " does not match first layer width " + std::to_string(in));
  }
  Var h = x;
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    h = ops::linear(h, params[mlp.layers[l].weight], params[mlp.layers[l].bias]);
    if (l + 1 < mlp.layers.size()) h = ops::relu(h);
  }
  return h;
}

}  // namespace ogm
