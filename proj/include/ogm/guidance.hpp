#pragma once

#include <cstddef>

#include "ogm/tensor.hpp"

namespace ogm {

// Connectivity from a source keypoint set into each target keypoint.
// Row i lists the sources allowed to send to target i.
struct GuidanceMask {
  BoolMatrix mask;
  double keep_ratio = 1.0;
};

struct InterMasks {
  GuidanceMask b_to_a;  // N×M
  GuidanceMask a_to_b;  // M×N
};

// max(1, floor(keep_ratio · m)); a 1e-9 slack absorbs products like 0.3·10.
std::size_t selected_count(double keep_ratio, std::size_t m);

// Per row, the selected_count(keep_ratio, cols) columns of highest similarity;
// ties go to the lower column index.
BoolMatrix top_k_rows(const Tensor& similarity, double keep_ratio);

// Both directions come from G = g_a · g_bᵀ: rows of G for B→A, rows of Gᵀ for A→B.
// Inputs are expected to be channel-normalised already.
InterMasks build_inter_masks(const Tensor& g_a, const Tensor& g_b, double keep_ratio);

// Guidance-pruned intra-image graph (ablation only; the default intra graph is dense).
GuidanceMask build_intra_mask(const Tensor& g, double keep_ratio);

}  // namespace ogm
