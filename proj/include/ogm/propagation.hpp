#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ogm/params.hpp"

namespace ogm {

// Which attention layers see positional features in their queries and keys.
enum class PositionMode { kFull, kNone, kSelfOnly };
PositionMode position_mode_from_string(const std::string& s);
std::string to_string(PositionMode mode);

struct AttentionLayerParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  MLPParams out_mlp;  // [d | Δd] (2C) -> C, last layer zero-initialised
  std::size_t num_heads = 4;
};

AttentionLayerParams make_attention_layer(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                          std::size_t num_heads, std::size_t out_hidden, std::mt19937_64& rng);

// Optional instrumentation for one attention call.
struct AttentionTrace {
  // When non-empty (one N×K tensor per head) these replace the softmax weights.
  std::vector<Tensor> forced_weights;
  // Filled on return.
  std::vector<Tensor> weights;
  Tensor delta;  // Δd before the residual MLP
  std::size_t score_pairs = 0;
  std::vector<std::size_t> fully_masked_rows;
};

// One position-guided attention layer:
//   q = Wq(d_tgt + p_tgt) + bq,  k = Wk(d_src + p_src) + bk,  v = Wv d_src + bv
//   Δd = concat_h softmax(q_h k_hᵀ / sqrt(C/heads) | mask) v_h
//   returns d_tgt + MLP([d_tgt | Δd])
// Absent positional inputs contribute nothing. Positional features never reach v.
Var position_guided_attention(const Binding& params, const AttentionLayerParams& layer, Var d_tgt,
                              std::optional<Var> p_tgt, Var d_src, std::optional<Var> p_src,
                              const BoolMatrix* mask = nullptr, AttentionTrace* trace = nullptr);

struct PropagationConfig {
  std::size_t descriptor_dim = 64;
  std::size_t num_blocks = 3;
  std::size_t num_heads = 4;
  std::size_t out_hidden = 0;  // 0 means 2·C
  PositionMode position_mode = PositionMode::kFull;
  // Representation f = d + p carried through every layer, with q, k and v all
  // computed from f (the entangled baseline).
  bool entangled_baseline = false;
};

struct PropagationBlock {
  AttentionLayerParams self_a;
  AttentionLayerParams self_b;
  AttentionLayerParams cross_a_from_b;
  AttentionLayerParams cross_b_from_a;
};

struct PropagationStack {
  PropagationConfig config;
  std::vector<PropagationBlock> blocks;
};

PropagationStack make_propagation_stack(ParameterStore& store, const PropagationConfig& cfg, std::mt19937_64& rng);

struct PropagationInputs {
  Var d_a;
  Var p_a;
  Var d_b;
  Var p_b;
  const BoolMatrix* mask_b_to_a = nullptr;  // N×M, null = dense
  const BoolMatrix* mask_a_to_b = nullptr;  // M×N
  const BoolMatrix* intra_a = nullptr;      // ablation: pruned self-attention
  const BoolMatrix* intra_b = nullptr;
};

struct PropagationStats {
  std::size_t self_score_pairs = 0;
  std::size_t cross_score_pairs = 0;
};

struct PropagationOutput {
  Var d_a;
  Var d_b;
};

// Per block: self-attention on A and on B, then cross-attention for both
// directions, each reading the other image's post-self descriptors.
PropagationOutput propagate(const Binding& params, const PropagationStack& stack, const PropagationInputs& in,
                            PropagationStats* stats = nullptr);

}  // namespace ogm
