#include "ogm/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace ogm {

PositionalEncoderParams make_positional_encoder(ParameterStore& store, std::size_t num_frequencies,
                                                std::size_t hidden, std::size_t output_dim, std::mt19937_64& rng) {
  if (num_frequencies == 0) throw std::invalid_argument("num_frequencies must be positive");
  PositionalEncoderParams p;
  p.num_frequencies = num_frequencies;
  p.mlp = make_mlp(store, "encoder.mlp", {4 * num_frequencies, hidden, output_dim}, rng);
  return p;
}

Tensor fourier_features(const Tensor& locations, std::size_t height, std::size_t width, std::size_t num_frequencies) {
  if (height == 0 || width == 0) throw std::invalid_argument("zero-sized image");
  if (locations.cols() != 2) throw DimensionError("locations must be N×2");
  const std::size_t n = locations.rows(), f = num_frequencies;
  std::vector<double> out(n * 4 * f);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = 2.0 * locations(i, 0) / static_cast<double>(width) - 1.0;
    const double y = 2.0 * locations(i, 1) / static_cast<double>(height) - 1.0;
    double* row = out.data() + i * 4 * f;
    for (std::size_t k = 0; k < f; ++k) {
      const double freq = std::ldexp(M_PI, static_cast<int>(k));
      row[k] = std::sin(freq * x);
      row[f + k] = std::cos(freq * x);
      row[2 * f + k] = std::sin(freq * y);
      row[3 * f + k] = std::cos(freq * y);
    }
  }
  return Tensor::matrix(n, 4 * f, std::move(out));
}

Var encode_positions(const Binding& params, const PositionalEncoderParams& encoder, const Tensor& locations,
                     std::size_t height, std::size_t width) {
  const Var raw = params.tape().constant(fourier_features(locations, height, width, encoder.num_frequencies));
  return mlp_apply(params, encoder.mlp, raw);
}

}  // namespace ogm
