#pragma once

#include <optional>
#include <random>

#include "ogm/guidance.hpp"
#include "ogm/propagation.hpp"
#include "test_util.hpp"

namespace ogm::testing {

struct Layer {
  ParameterStore store;
  AttentionLayerParams params;

  Layer(std::size_t c, std::size_t heads, std::uint64_t seed, bool randomize = true) {
    std::mt19937_64 rng(seed);
    params = make_attention_layer(store, "layer", c, heads, 0, rng);
    if (randomize) randomize_parameters(store, rng);
  }

  Tensor apply(const Tensor& d_t, const Tensor* p_t, const Tensor& d_s, const Tensor* p_s,
               const BoolMatrix* mask = nullptr, AttentionTrace* trace = nullptr) const {
    Tape t;
    Binding b(t, store, false);
    std::optional<Var> pt, ps;
    if (p_t) pt = t.constant(*p_t);
    if (p_s) ps = t.constant(*p_s);
    return position_guided_attention(b, params, t.constant(d_t), pt, t.constant(d_s), ps, mask, trace).value();
  }
};

inline BoolMatrix random_mask(std::size_t n, std::size_t m, std::mt19937_64& rng) {
  std::mt19937_64 g(rng());
  return build_inter_masks(random_tensor(n, 3, g), random_tensor(m, 3, g), 0.5).b_to_a.mask;
}

}  // namespace ogm::testing
