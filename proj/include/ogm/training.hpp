#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ogm/features.hpp"
#include "ogm/geomeval.hpp"
#include "ogm/model.hpp"

namespace ogm {

struct LossTarget {
  std::vector<IndexPair> positive_pairs;
  std::vector<std::size_t> dustbin_a;
  std::vector<std::size_t> dustbin_b;
  std::vector<IndexPair> ignored;  // pairs inside the (correct, incorrect] band

  bool empty() const { return positive_pairs.empty() && dustbin_a.empty() && dustbin_b.empty(); }
};

// Positives are mutually nearest pairs under symmetric transfer error below
// `correct_px`; a keypoint goes to the dustbin when its nearest partner is
// beyond `incorrect_px`. Pose pairs need gt_matches.
LossTarget build_target(const PairRecord& pair, double correct_px = 3.0, double incorrect_px = 5.0);

class UnsupervisablePair : public std::invalid_argument {
 public:
  UnsupervisablePair() : std::invalid_argument("unsupervisable pair") {}
};

// -mean log P[pos] - mean log P[i, dustbin] - mean log P[dustbin, j]; empty terms are dropped.
Var nll_loss(Var log_assignment, const LossTarget& target);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double decay_rate = 1.0;     // per step after the hinge
  std::size_t hinge_step = 0;
};

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

double learning_rate_at(const AdamConfig& cfg, std::size_t step);
OptimizerState make_optimizer_state(const ParameterStore& store);
void adam_step(ParameterStore& store, const std::vector<Tensor>& grads, OptimizerState& state, const AdamConfig& cfg);

void save_optimizer_state(const OptimizerState& state, const std::filesystem::path& path);
OptimizerState load_optimizer_state(const std::filesystem::path& path, const ParameterStore& store);

struct TrainConfig {
  ModelConfig model;
  AdamConfig optimizer;
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  std::size_t eval_interval = 0;   // 0 = only at the end
  std::size_t eval_pairs = 0;      // held out from the end of the training set
  std::size_t checkpoint_interval = 0;
  double min_confidence = kDefaultMinConfidence;
  std::uint64_t seed = 0;
  std::string train_data;
  std::string val_data;
  std::size_t jobs = 1;
};

// Parses JSON; unknown keys and out-of-range values raise ConfigError naming the field.
TrainConfig parse_train_config(const std::string& json_text);
std::string train_config_to_json(const TrainConfig& cfg);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct StepRecord {
  std::size_t step = 0;  // 1-based count of completed updates
  double loss = 0.0;     // mean over the batch
  double learning_rate = 0.0;
};

struct EvalRecord {
  std::size_t step = 0;
  PRSummary summary;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EvalRecord&)> on_eval;
  // Called every checkpoint_interval steps and at the end.
  std::function<void(const MatcherModel&, const OptimizerState&)> on_checkpoint;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::size_t skipped_pairs = 0;  // unsupervisable pairs left out
};

// Batches are drawn from per-epoch permutations seeded by (seed, epoch), so a
// run resumed from step k sees the same pairs as an uninterrupted one.
TrainResult train(MatcherModel& model, OptimizerState& state, const std::vector<PairRecord>& train_set,
                  const std::vector<PairRecord>& val_set, const TrainConfig& cfg, const TrainHooks& hooks = {});

// Pooled precision / recall of the model's matches on `pairs`.
PRSummary evaluate_model(const MatcherModel& model, const std::vector<PairRecord>& pairs, double min_confidence,
                         std::size_t jobs = 1);
PRSummary evaluate_mnn(const std::vector<PairRecord>& pairs);

}  // namespace ogm
