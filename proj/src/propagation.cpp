#include "ogm/propagation.hpp"

#include <cmath>
#include <stdexcept>

namespace ogm {

PositionMode position_mode_from_string(const std::string& s) {
  if (s == "full") return PositionMode::kFull;
  if (s == "none") return PositionMode::kNone;
  if (s == "self_only") return PositionMode::kSelfOnly;
  throw std::invalid_argument("position_mode must be one of full, none, self_only (got \"" + s + "\")");
}

std::string to_string(PositionMode mode) {
  switch (mode) {
    case PositionMode::kFull: return "full";
    case PositionMode::kNone: return "none";
    case PositionMode::kSelfOnly: return "self_only";
  }
  return "?";
}

AttentionLayerParams make_attention_layer(ParameterStore& store, const std::string& prefix, std::size_t dim,
                                          std::size_t num_heads, std::size_t out_hidden, std::mt19937_64& rng) {
  if (num_heads == 0 || dim % num_heads != 0) {
    throw std::invalid_argument("descriptor dim " + std::to_string(dim) + " is not divisible by " +
                                std::to_string(num_heads) + " heads");
  }
  AttentionLayerParams p;
  p.query = make_linear(store, prefix + ".q", dim, dim, rng);
  p.key = make_linear(store, prefix + ".k", dim, dim, rng);
  p.value = make_linear(store, prefix + ".v", dim, dim, rng);
  p.out_mlp = make_mlp(store, prefix + ".out", {2 * dim, out_hidden ? out_hidden : 2 * dim, dim}, rng,
                       LastLayerInit::kZero);
  p.num_heads = num_heads;
  return p;
}

Var position_guided_attention(const Binding& params, const AttentionLayerParams& layer, Var d_tgt,
                              std::optional<Var> p_tgt, Var d_src, std::optional<Var> p_src, const BoolMatrix* mask,
                              AttentionTrace* trace) {
  const std::size_t c = d_tgt.cols();
  if (d_src.cols() != c) throw DimensionError("attention: source and target widths differ");
  if (c % layer.num_heads != 0) throw DimensionError("attention: width not divisible by heads");
  const std::size_t n = d_tgt.rows(), k = d_src.rows();
  if (mask && (mask->rows != n || mask->cols != k)) throw DimensionError("attention: mask shape mismatch");

  const Var q_in = p_tgt ? ops::add(d_tgt, *p_tgt) : d_tgt;
  const Var k_in = p_src ? ops::add(d_src, *p_src) : d_src;
  const Var q = ops::linear(q_in, params[layer.query.weight], params[layer.query.bias]);
  const Var key = ops::linear(k_in, params[layer.key.weight], params[layer.key.bias]);
  const Var v = ops::linear(d_src, params[layer.value.weight], params[layer.value.bias]);

  const std::size_t heads = layer.num_heads, ch = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(ch));
  const bool forced = trace && !trace->forced_weights.empty();
  if (forced && trace->forced_weights.size() != heads) throw DimensionError("attention: one forced weight matrix per head");
  if (trace) {
    trace->weights.clear();
    trace->score_pairs = 0;
    trace->fully_masked_rows.clear();
  }

  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var vh = ops::slice_cols(v, h * ch, ch);
    Var w;
    if (forced) {
      w = params.tape().constant(trace->forced_weights[h]);
    } else {
      const Var qh = ops::slice_cols(q, h * ch, ch);
      const Var kh = ops::slice_cols(key, h * ch, ch);
      std::size_t evaluated = n * k;
      const Var scores = mask ? ops::matmul_nt_masked(qh, kh, *mask, &evaluated) : ops::matmul_nt(qh, kh);
      ops::SoftmaxInfo info;
      w = ops::softmax_rows(ops::scale(scores, inv_sqrt), mask, &info);
      if (trace) {
        trace->score_pairs += evaluated;
        if (h == 0) trace->fully_masked_rows = info.fully_masked_rows;
      }
    }
    if (trace) trace->weights.push_back(w.value());
    outs.push_back(ops::matmul(w, vh));
  }
  const Var delta = heads == 1 ? outs.front() : ops::concat_cols(outs);
  if (trace) trace->delta = delta.value();
  const std::vector<Var> cat{d_tgt, delta};
  const Var update = mlp_apply(params, layer.out_mlp, ops::concat_cols(cat));
  return ops::add(d_tgt, update);
}

PropagationStack make_propagation_stack(ParameterStore& store, const PropagationConfig& cfg, std::mt19937_64& rng) {
  if (cfg.num_blocks == 0) throw std::invalid_argument("num_blocks must be >= 1");
  PropagationStack stack;
  stack.config = cfg;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    PropagationBlock block;
    block.self_a = make_attention_layer(store, prefix + ".self_a", cfg.descriptor_dim, cfg.num_heads, cfg.out_hidden, rng);
    block.self_b = make_attention_layer(store, prefix + ".self_b", cfg.descriptor_dim, cfg.num_heads, cfg.out_hidden, rng);
    block.cross_a_from_b =
        make_attention_layer(store, prefix + ".cross_a", cfg.descriptor_dim, cfg.num_heads, cfg.out_hidden, rng);
    block.cross_b_from_a =
        make_attention_layer(store, prefix + ".cross_b", cfg.descriptor_dim, cfg.num_heads, cfg.out_hidden, rng);
    stack.blocks.push_back(block);
  }
  return stack;
}

PropagationOutput propagate(const Binding& params, const PropagationStack& stack, const PropagationInputs& in,
                            PropagationStats* stats) {
  if (in.d_a.rows() == 0 || in.d_b.rows() == 0) throw std::invalid_argument("empty keypoint set");
  const PropagationConfig& cfg = stack.config;

  Var d_a = in.d_a, d_b = in.d_b;
  std::optional<Var> self_p_a, self_p_b, cross_p_a, cross_p_b;
  if (cfg.entangled_baseline) {
    // f = d + p, positions folded into the carried representation.
    if (cfg.position_mode != PositionMode::kNone) {
      d_a = ops::add(d_a, in.p_a);
      d_b = ops::add(d_b, in.p_b);
    }
  } else {
    if (cfg.position_mode != PositionMode::kNone) {
      self_p_a = in.p_a;
      self_p_b = in.p_b;
    }
    if (cfg.position_mode == PositionMode::kFull) {
      cross_p_a = in.p_a;
      cross_p_b = in.p_b;
    }
  }

  AttentionTrace trace;
  AttentionTrace* tr = stats ? &trace : nullptr;
  auto count = [&](std::size_t& slot) {
    if (stats) slot += trace.score_pairs;
  };
  for (const PropagationBlock& block : stack.blocks) {
    d_a = position_guided_attention(params, block.self_a, d_a, self_p_a, d_a, self_p_a, in.intra_a, tr);
    if (stats) count(stats->self_score_pairs);
    d_b = position_guided_attention(params, block.self_b, d_b, self_p_b, d_b, self_p_b, in.intra_b, tr);
    if (stats) count(stats->self_score_pairs);
    // Double-buffered: both directions read the post-self descriptors.
    const Var src_a = d_a, src_b = d_b;
    d_a = position_guided_attention(params, block.cross_a_from_b, src_a, cross_p_a, src_b, cross_p_b, in.mask_b_to_a, tr);
    if (stats) count(stats->cross_score_pairs);
    d_b = position_guided_attention(params, block.cross_b_from_a, src_b, cross_p_b, src_a, cross_p_a, in.mask_a_to_b, tr);
    if (stats) count(stats->cross_score_pairs);
  }
  return {d_a, d_b};
}

}  // namespace ogm
