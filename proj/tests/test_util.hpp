#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ogm/autograd.hpp"
#include "ogm/features.hpp"
#include "ogm/params.hpp"

namespace ogm::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = u(rng);
  return Tensor::matrix(rows, cols, std::move(v));
}

// Builds a scalar from leaves placed on a fresh tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

// Gradients whose true value vanishes (e.g. a key bias under softmax) leave only
// finite-difference noise; below this norm the comparison becomes absolute.
inline constexpr double kGradientNormFloor = 1e-5;

// Largest over inputs of ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, floor),
// with central differences of step eps.
inline double gradient_rel_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double eps = 1e-6) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  tape.backward(f(tape, leaves));

  auto eval = [&](const std::vector<Tensor>& in) {
    Tape t;
    std::vector<Var> l;
    for (const Tensor& x : in) l.push_back(t.leaf(x, false));
    return f(t, l).value().item();
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double> analytic = tape.grad(leaves[k]);
    std::vector<double> numeric(analytic.size());
    for (std::size_t e = 0; e < analytic.size(); ++e) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      std::vector<double> vp = inputs[k].to_vector(), vm = vp;
      vp[e] += eps;
      vm[e] -= eps;
      plus[k] = Tensor(inputs[k].shape(), vp);
      minus[k] = Tensor(inputs[k].shape(), vm);
      numeric[e] = (eval(plus) - eval(minus)) / (2.0 * eps);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t e = 0; e < analytic.size(); ++e) {
      diff += (analytic[e] - numeric[e]) * (analytic[e] - numeric[e]);
      na += analytic[e] * analytic[e];
      nn += numeric[e] * numeric[e];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), kGradientNormFloor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

// Same check against every parameter of a store: f builds a scalar from a Binding.
using ParamFn = std::function<Var(const Binding&)>;

inline double parameter_gradient_rel_error(ParameterStore& store, const ParamFn& f, double eps = 1e-6) {
  Tape tape;
  Binding b(tape, store);
  tape.backward(f(b));
  const std::vector<Tensor> grads = b.gradients();
  auto eval = [&] {
    Tape t;
    Binding bb(t, store, false);
    return f(bb).value().item();
  };
  double worst = 0.0;
  for (ParamId id = 0; id < store.size(); ++id) {
    const Tensor original = store[id];
    const auto analytic = grads[id].data();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t e = 0; e < original.size(); ++e) {
      std::vector<double> v = original.to_vector();
      v[e] = original.data()[e] + eps;
      store.set(id, Tensor(original.shape(), v));
      const double fp = eval();
      v[e] = original.data()[e] - eps;
      store.set(id, Tensor(original.shape(), v));
      const double fm = eval();
      const double numeric = (fp - fm) / (2.0 * eps);
      diff += (analytic[e] - numeric) * (analytic[e] - numeric);
      na += analytic[e] * analytic[e];
      nn += numeric * numeric;
    }
    store.set(id, original);
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), kGradientNormFloor});
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

// Overwrites every parameter (including zero-initialised layers) with uniform values in ±scale.
inline void randomize_parameters(ParameterStore& store, std::mt19937_64& rng, double scale = 0.5) {
  for (ParamId id = 0; id < store.size(); ++id) {
    store.set(id, random_tensor(store[id].rows(), store[id].cols(), rng, -scale, scale));
  }
}

// Small random feature set with keypoints inside a w×h image.
inline FeatureSet random_feature_set(std::size_t n, std::size_t c, std::size_t cg, std::mt19937_64& rng,
                                     std::uint32_t h = 64, std::uint32_t w = 80) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f), ux(0.0f, static_cast<float>(w) - 1.0f),
      uy(0.0f, static_cast<float>(h) - 1.0f), us(0.0f, 1.0f);
  FeatureSet fs;
  fs.image_id = "random";
  fs.height = h;
  fs.width = w;
  fs.descriptor_dim = c;
  fs.guidance_dim = cg;
  for (std::size_t i = 0; i < n; ++i) {
    fs.locations.push_back(ux(rng));
    fs.locations.push_back(uy(rng));
    fs.scores.push_back(us(rng));
  }
  for (std::size_t i = 0; i < n * c; ++i) fs.descriptors.push_back(u(rng));
  for (std::size_t i = 0; i < n * cg; ++i) fs.guidance.push_back(u(rng));
  return fs;
}

}  // namespace ogm::testing
