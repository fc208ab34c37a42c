#pragma once

#include <cstddef>
#include <random>

#include "ogm/params.hpp"

namespace ogm {

struct PositionalEncoderParams {
  std::size_t num_frequencies = 16;
  MLPParams mlp;  // 4·num_frequencies -> C
};

PositionalEncoderParams make_positional_encoder(ParameterStore& store, std::size_t num_frequencies,
                                                std::size_t hidden, std::size_t output_dim, std::mt19937_64& rng);

// Locations mapped to [-1, 1] per axis (x / width, y / height), then
// [sin(2^k π x), cos(2^k π x), sin(2^k π y), cos(2^k π y)] blocks for k < F,
// laid out as four F-wide column groups.
Tensor fourier_features(const Tensor& locations, std::size_t height, std::size_t width, std::size_t num_frequencies);

// Positional features p (N×C). Differentiable w.r.t. the MLP only.
Var encode_positions(const Binding& params, const PositionalEncoderParams& encoder, const Tensor& locations,
                     std::size_t height, std::size_t width);

}  // namespace ogm
