#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "ogm/encoder.hpp"
#include "ogm/features.hpp"
#include "ogm/guidance.hpp"
#include "ogm/matching.hpp"
#include "ogm/propagation.hpp"

namespace ogm {

// Invalid or inconsistent configuration (bad field, checkpoint/feature mismatch).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t descriptor_dim = 64;
  std::size_t guidance_dim = 32;
  std::size_t num_blocks = 3;
  std::size_t num_heads = 4;
  std::size_t num_frequencies = 16;
  std::size_t encoder_hidden = 0;  // 0 means 2·C
  std::size_t out_hidden = 0;      // 0 means 2·C
  double keep_ratio = 0.5;
  PositionMode position_mode = PositionMode::kFull;
  bool entangled_baseline = false;
  bool guidance_on_intra = false;
  SinkhornConfig sinkhorn;
  double initial_dustbin = 1.0;
  std::uint64_t init_seed = 0;

  void validate() const;
};

struct ForwardOptions {
  std::optional<double> keep_ratio;  // overrides the configured ratio
  PropagationStats* stats = nullptr;
};

struct ForwardResult {
  Var log_assignment;  // (N+1)×(M+1)
  Var d_a;
  Var d_b;
};

class MatcherModel {
 public:
  explicit MatcherModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const PropagationStack& stack() const { return stack_; }
  const PositionalEncoderParams& encoder() const { return encoder_; }
  ParamId dustbin() const { return dustbin_; }

  // Throws ConfigError when the feature widths disagree with the model.
  void check_compatible(const FeatureSet& fs) const;

  ForwardResult forward(const Binding& params, const FeatureSet& a, const FeatureSet& b,
                        const ForwardOptions& opts = {}) const;

  // Inference without gradients.
  AssignmentMatrix assign(const FeatureSet& a, const FeatureSet& b, const ForwardOptions& opts = {}) const;
  MatchList match(const FeatureSet& a, const FeatureSet& b, double min_confidence = kDefaultMinConfidence) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  PositionalEncoderParams encoder_;
  PropagationStack stack_;
  ParamId dustbin_ = 0;
};

// Checkpoint: "OGCK", u32 version, config block, u32 parameter count, then per
// parameter u32 rows, u32 cols and rows·cols f64 values, all little-endian.
void save_checkpoint(const MatcherModel& model, const std::filesystem::path& path);
MatcherModel load_checkpoint(const std::filesystem::path& path);

}  // namespace ogm
