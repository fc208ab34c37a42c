#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ogm/autograd.hpp"
#include "ogm/features.hpp"

namespace ogm {

struct SinkhornConfig {
  std::size_t iterations = 100;
  double temperature = 1.0;
};

// S = d̄_a · d̄_bᵀ.
Var similarity(Var d_a, Var d_b);

// Log-domain optimal transport on the (N+1)×(M+1) matrix [S | α; α | α] / temperature
// with marginals [1..1, M] (rows) and [1..1, N] (columns), both scaled by 1/(N+M).
// Returns log P rescaled so that each real row/column sums to 1. `dustbin` is 1×1.
// Gradients flow through every iteration.
Var log_sinkhorn(Var scores, Var dustbin, const SinkhornConfig& cfg = {});

struct AssignmentMatrix {
  Tensor probs;  // (N+1)×(M+1), last row/col are dustbins
  std::size_t iterations_run = 0;

  std::size_t n() const { return probs.rows() - 1; }
  std::size_t m() const { return probs.cols() - 1; }
};

AssignmentMatrix to_assignment(const Tensor& log_probs, std::size_t iterations);

struct Match {
  std::size_t i = 0;
  std::size_t j = 0;
  double confidence = 0.0;
};

struct MatchList {
  std::vector<Match> pairs;
  double threshold = 0.0;
};

constexpr double kDefaultMinConfidence = 0.2;

// Mutual argmax over the real block; ties go to the lower index.
MatchList extract_matches(const AssignmentMatrix& assign, double min_confidence = kDefaultMinConfidence);

// Mutual nearest neighbours on raw descriptor dot products; confidence is the dot product.
MatchList mutual_nearest_neighbors(const Tensor& desc_a, const Tensor& desc_b);

std::string matches_to_json(const MatchList& matches, const FeatureSet& a, const FeatureSet& b);
MatchList matches_from_json(const std::string& text);

}  // namespace ogm
