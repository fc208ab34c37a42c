#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <set>

#include "ogm/dataset.hpp"
#include "ogm/training.hpp"
#include "test_util.hpp"

namespace ogm {
namespace {

using testing::random_feature_set;

FeatureSet points_set(const std::vector<Eigen::Vector2d>& pts, std::size_t c = 4, std::size_t cg = 2) {
  FeatureSet fs;
  fs.image_id = "pts";
  fs.height = 100;
  fs.width = 100;
  fs.descriptor_dim = c;
  fs.guidance_dim = cg;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    fs.locations.push_back(static_cast<float>(pts[i].x()));
    fs.locations.push_back(static_cast<float>(pts[i].y()));
    fs.scores.push_back(1.0f);
    for (std::size_t k = 0; k < c; ++k) fs.descriptors.push_back(k == i % c ? 1.0f : 0.0f);
    for (std::size_t k = 0; k < cg; ++k) fs.guidance.push_back(static_cast<float>(i + k));
  }
  return fs;
}

PairRecord translation_pair(const std::vector<Eigen::Vector2d>& a, const std::vector<Eigen::Vector2d>& b, double tx) {
  HomographyGT h;
  h.H(0, 2) = tx;
  return {points_set(a), points_set(b), h, std::nullopt};
}

ModelConfig tiny_model(std::size_t c = 16, std::size_t cg = 8, std::size_t blocks = 1) {
  ModelConfig m;
  m.descriptor_dim = c;
  m.guidance_dim = cg;
  m.num_blocks = blocks;
  m.num_heads = 2;
  m.num_frequencies = 4;
  m.sinkhorn.iterations = 20;
  return m;
}

GenerationConfig tiny_generation(std::uint64_t seed) {
  GenerationConfig g;
  g.radius = 16.0;
  g.seed = seed;
  g.spec.crop_height = 96;
  g.spec.crop_width = 96;
  g.extractor.max_keypoints = 24;
  g.extractor.descriptor_dim = 16;
  g.extractor.guidance_dim = 8;
  return g;
}

std::vector<PairRecord> tiny_dataset(std::size_t n, std::uint64_t seed) {
  const GenerationConfig g = tiny_generation(seed);
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_pair(g, i).record);
  return out;
}

std::vector<std::vector<double>> snapshot(const ParameterStore& store) {
  std::vector<std::vector<double>> out;
  for (ParamId id = 0; id < store.size(); ++id) out.push_back(store[id].to_vector());
  return out;
}

// ---- build_target ----

TEST(BuildTarget, IdentityPairIsAllPositive) {
  const std::vector<Eigen::Vector2d> pts = {{10, 10}, {40, 12}, {70, 55}, {20, 80}};
  const LossTarget t = build_target(translation_pair(pts, pts, 0.0));
  ASSERT_EQ(t.positive_pairs.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(t.positive_pairs[i], IndexPair(i, i));
  EXPECT_TRUE(t.dustbin_a.empty());
  EXPECT_TRUE(t.dustbin_b.empty());
  EXPECT_TRUE(t.ignored.empty());
}

TEST(BuildTarget, FourPixelShiftFallsInIgnoreBand) {
  const std::vector<Eigen::Vector2d> pts = {{10, 10}, {50, 10}, {10, 60}};
  const LossTarget t = build_target(translation_pair(pts, pts, 4.0));
  EXPECT_TRUE(t.positive_pairs.empty());
  EXPECT_TRUE(t.dustbin_a.empty());
  EXPECT_TRUE(t.dustbin_b.empty());
  ASSERT_EQ(t.ignored.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(t.ignored[i], IndexPair(i, i));
  EXPECT_TRUE(t.empty());
}

TEST(BuildTarget, FarPointsGoToDustbin) {
  const LossTarget t = build_target(translation_pair({{10, 10}, {90, 90}}, {{10, 10}, {50, 20}}, 0.0));
  EXPECT_EQ(t.positive_pairs, (std::vector<IndexPair>{{0, 0}}));
  EXPECT_EQ(t.dustbin_a, (std::vector<std::size_t>{1}));
  EXPECT_EQ(t.dustbin_b, (std::vector<std::size_t>{1}));
}

TEST(BuildTarget, MatchesBruteForceScan) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const PairRecord p = generate_pair(tiny_generation(seed), 0).record;
    const LossTarget t = build_target(p);
    const std::size_t n = p.set_a.size(), m = p.set_b.size();
    std::vector<std::vector<double>> e(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) e[i][j] = transfer_error(p.gt_transform, p.set_a.location(i), p.set_b.location(j));

    std::set<IndexPair> pos, ign;
    std::vector<std::size_t> bin_a, bin_b;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < m; ++j)
        if (e[i][j] < e[i][best]) best = j;
      std::size_t back = 0;
      for (std::size_t k = 1; k < n; ++k)
        if (e[k][best] < e[back][best]) back = k;
      if (back == i && e[i][best] < 3.0) pos.insert({i, best});
      if (e[i][best] > 5.0) bin_a.push_back(i);
      for (std::size_t j = 0; j < m; ++j)
        if (e[i][j] >= 3.0 && e[i][j] <= 5.0) ign.insert({i, j});
    }
    for (std::size_t j = 0; j < m; ++j) {
      double lo = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) lo = std::min(lo, e[i][j]);
      if (lo > 5.0) bin_b.push_back(j);
    }
    EXPECT_EQ(std::set<IndexPair>(t.positive_pairs.begin(), t.positive_pairs.end()), pos);
    EXPECT_EQ(std::set<IndexPair>(t.ignored.begin(), t.ignored.end()), ign);
    EXPECT_EQ(t.dustbin_a, bin_a);
    EXPECT_EQ(t.dustbin_b, bin_b);
    EXPECT_FALSE(pos.empty());
  }
}

TEST(BuildTarget, SetsAreDisjoint) {
  const PairRecord p = generate_pair(tiny_generation(8), 0).record;
  const LossTarget t = build_target(p);
  std::set<std::size_t> rows, cols;
  for (const auto& [i, j] : t.positive_pairs) {
    EXPECT_TRUE(rows.insert(i).second);
    EXPECT_TRUE(cols.insert(j).second);
  }
  for (std::size_t i : t.dustbin_a) EXPECT_FALSE(rows.count(i));
  for (std::size_t j : t.dustbin_b) EXPECT_FALSE(cols.count(j));
  const std::set<IndexPair> pos(t.positive_pairs.begin(), t.positive_pairs.end());
  for (const IndexPair& ij : t.ignored) EXPECT_FALSE(pos.count(ij));
}

TEST(BuildTarget, PoseUsesGroundTruthMatches) {
  std::mt19937_64 rng(2);
  PoseSceneConfig cfg;
  cfg.num_points = 30;
  cfg.outliers_per_view = 5;
  PairRecord p = make_pose_pair(cfg, rng);
  ASSERT_TRUE(p.gt_matches.has_value());
  const LossTarget t = build_target(p);
  EXPECT_EQ(t.positive_pairs, *p.gt_matches);
  EXPECT_EQ(t.positive_pairs.size() + t.dustbin_a.size(), p.set_a.size());
  EXPECT_EQ(t.positive_pairs.size() + t.dustbin_b.size(), p.set_b.size());

  p.gt_matches.reset();
  EXPECT_THROW(build_target(p), std::invalid_argument);
}

// ---- nll_loss ----

Var log_constant(Tape& tape, std::size_t rows, std::size_t cols, const std::vector<double>& probs) {
  std::vector<double> v;
  for (double x : probs) v.push_back(std::log(x));
  return tape.constant(Tensor::matrix(rows, cols, v));
}

TEST(NllLoss, CertainPositivesGiveZero) {
  Tape tape;
  const Var lp = log_constant(tape, 3, 3, {1, 1e-3, 1e-3, 1e-3, 1, 1e-3, 1e-3, 1e-3, 1});
  LossTarget t;
  t.positive_pairs = {{0, 0}, {1, 1}};
  EXPECT_EQ(nll_loss(lp, t).value().item(), 0.0);
}

TEST(NllLoss, UniformTwoByTwoWithOnePositive) {
  // Zero scores give a rank-one kernel, so the transport plan is the product of
  // the marginals a = b = [1, 1, 2] over their total 4: real entries 1/4.
  const double expected = std::log(4.0);
  Tape tape;
  const Var s = tape.constant(Tensor::zeros(2, 2));
  const Var z = tape.constant(Tensor::zeros(1, 1));
  const Var lp = log_sinkhorn(s, z, {100, 1.0});
  LossTarget t;
  t.positive_pairs = {{0, 1}};
  EXPECT_NEAR(nll_loss(lp, t).value().item(), expected, 1e-12);
}

TEST(NllLoss, TermsAveragedSeparatelyThenSummed) {
  Tape tape;
  const std::vector<double> p = {0.5, 0.1, 0.2, 0.1, 0.25, 0.4, 0.3, 0.8, 1.0};
  const Var lp = log_constant(tape, 3, 3, p);
  LossTarget t;
  t.positive_pairs = {{0, 0}, {1, 1}};
  t.dustbin_a = {0};
  t.dustbin_b = {0, 1};
  t.ignored = {{0, 1}};
  const double expected = -(std::log(0.5) + std::log(0.25)) / 2.0 - std::log(0.2) -
                          (std::log(0.3) + std::log(0.8)) / 2.0;
  EXPECT_NEAR(nll_loss(lp, t).value().item(), expected, 1e-12);
}

TEST(NllLoss, NonNegativeOnSinkhornOutput) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 20; ++k) {
    Tape tape;
    const Var lp = log_sinkhorn(tape.constant(testing::random_tensor(5, 4, rng, -3, 3)),
                                tape.constant(Tensor::matrix(1, 1, {0.5})), {100, 1.0});
    LossTarget t;
    t.positive_pairs = {{0, 1}, {2, 0}};
    t.dustbin_a = {4};
    t.dustbin_b = {3};
    EXPECT_GT(nll_loss(lp, t).value().item(), 0.0);
  }
}

TEST(NllLoss, EmptyTargetIsUnsupervisable) {
  Tape tape;
  const Var lp = tape.constant(Tensor::zeros(3, 3));
  LossTarget t;
  t.ignored = {{0, 0}};
  try {
    nll_loss(lp, t);
    FAIL() << "expected UnsupervisablePair";
  } catch (const UnsupervisablePair& e) {
    EXPECT_STREQ(e.what(), "unsupervisable pair");
  }
}

TEST(NllLoss, RejectsOutOfRangeIndex) {
  Tape tape;
  LossTarget t;
  t.positive_pairs = {{3, 0}};
  EXPECT_THROW(nll_loss(tape.constant(Tensor::zeros(3, 3)), t), std::out_of_range);
}

TEST(NllLoss, GradientWrtDescriptors) {
  std::mt19937_64 rng(4);
  LossTarget t;
  t.positive_pairs = {{0, 2}, {1, 0}, {3, 3}};
  t.dustbin_a = {2};
  t.dustbin_b = {1, 4};
  const std::vector<Tensor> in = {testing::random_tensor(4, 6, rng), testing::random_tensor(5, 6, rng),
                                  Tensor::matrix(1, 1, {0.3})};
  const double err = testing::gradient_rel_error(
      [&](Tape&, const std::vector<Var>& x) {
        return nll_loss(log_sinkhorn(similarity(x[0], x[1]), x[2], {50, 1.0}), t);
      },
      in);
  EXPECT_LT(err, 1e-4);
}

// ---- end to end ----

TEST(EndToEnd, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  MatcherModel model(tiny_model(16, 8, 1));
  testing::randomize_parameters(model.parameters(), rng, 0.3);
  const FeatureSet a = random_feature_set(6, 16, 8, rng), b = random_feature_set(6, 16, 8, rng);
  LossTarget t;
  t.positive_pairs = {{0, 1}, {2, 2}, {3, 0}, {5, 4}};
  t.dustbin_a = {1, 4};
  t.dustbin_b = {3, 5};
  const double err = testing::parameter_gradient_rel_error(
      model.parameters(), [&](const Binding& p) { return nll_loss(model.forward(p, a, b).log_assignment, t); });
  EXPECT_LT(err, 1e-3);
}

// ---- optimizer ----

TEST(Adam, LearningRateSchedule) {
  AdamConfig c;
  c.learning_rate = 2e-3;
  c.decay_rate = 0.5;
  c.hinge_step = 10;
  EXPECT_EQ(learning_rate_at(c, 0), 2e-3);
  EXPECT_EQ(learning_rate_at(c, 10), 2e-3);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 12), 2e-3 * 0.25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr·g/(|g| + ε) per element.
  ParameterStore store;
  store.add("w", Tensor::matrix(1, 3, {1.0, 2.0, 3.0}));
  OptimizerState s = make_optimizer_state(store);
  AdamConfig c;
  c.learning_rate = 0.1;
  c.epsilon = 0.0;
  adam_step(store, {Tensor::matrix(1, 3, {4.0, -0.5, 1e-3})}, s, c);
  EXPECT_NEAR(store[0].data()[0], 0.9, 1e-12);
  EXPECT_NEAR(store[0].data()[1], 2.1, 1e-12);
  EXPECT_NEAR(store[0].data()[2], 2.9, 1e-12);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, StateRoundTrip) {
  ParameterStore store;
  store.add("w", Tensor::matrix(2, 2, {1, 2, 3, 4}));
  store.add("b", Tensor::matrix(1, 2, {0, 0}));
  OptimizerState s = make_optimizer_state(store);
  adam_step(store, {Tensor::matrix(2, 2, {0.1, -0.2, 0.3, 0.4}), Tensor::matrix(1, 2, {1.0, -1.0})}, s, {});
  const auto path = std::filesystem::temp_directory_path() / "ogm_test_opt.bin";
  save_optimizer_state(s, path);
  const OptimizerState r = load_optimizer_state(path, store);
  EXPECT_EQ(r.step, s.step);
  EXPECT_EQ(r.m, s.m);
  EXPECT_EQ(r.v, s.v);

  ParameterStore other;
  other.add("w", Tensor::zeros(2, 2));
  EXPECT_THROW(load_optimizer_state(path, other), FormatError);
  std::filesystem::remove(path);
}

// ---- config ----

const char* kMinimalConfig = R"({"model": {"descriptor_dim": 16, "guidance_dim": 8, "num_blocks": 1},
                                 "training": {"steps": 5}})";

TEST(TrainConfig, MinimalParsesWithDefaults) {
  const TrainConfig c = parse_train_config(kMinimalConfig);
  EXPECT_EQ(c.model.descriptor_dim, 16u);
  EXPECT_EQ(c.steps, 5u);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.optimizer.learning_rate, 1e-3);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = parse_train_config(kMinimalConfig);
  c.model.keep_ratio = 0.3;
  c.model.position_mode = PositionMode::kSelfOnly;
  c.model.entangled_baseline = true;
  c.optimizer.decay_rate = 0.999;
  c.seed = 77;
  const std::string text = train_config_to_json(c);
  EXPECT_EQ(train_config_to_json(parse_train_config(text)), text);
}

std::string config_error(const std::string& text) {
  try {
    parse_train_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(TrainConfig, ErrorsNameTheField) {
  EXPECT_NE(config_error(R"({"model": {"descriptor_dim": 16, "guidance_dim": 8, "num_blocks": 1, "keep_ratio": 1.5},
                            "training": {"steps": 5}})")
                .find("model.keep_ratio"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"model": {"descriptor_dim": 16, "num_blocks": 1}, "training": {"steps": 5}})")
                .find("model.guidance_dim"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"model": {"descriptor_dim": 16, "guidance_dim": 8, "num_blocks": 1}, "training": {}})")
                .find("training.steps"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"model": {"descriptor_dim": 16, "guidance_dim": 8, "num_blocks": 1, "blocks": 2},
                            "training": {"steps": 5}})")
                .find("model.blocks"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"model": {"descriptor_dim": 16, "guidance_dim": 8, "num_blocks": 1, "num_heads": 3},
                            "training": {"steps": 5}})")
                .find("model.num_heads"),
            std::string::npos);
  EXPECT_NE(config_error(R"({"training": {"steps": 5}})").find("model"), std::string::npos);
  EXPECT_NE(config_error("{not json").find("JSON"), std::string::npos);
}

// ---- loop ----

TrainConfig loop_config(std::size_t steps, std::size_t batch) {
  TrainConfig c;
  c.model = tiny_model();
  c.steps = steps;
  c.batch_size = batch;
  c.seed = 5;
  return c;
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const std::vector<PairRecord> data = tiny_dataset(3, 21);
  TrainConfig c = loop_config(4, 2);
  c.optimizer.learning_rate = 0.0;
  MatcherModel model(c.model);
  const auto before = snapshot(model.parameters());
  OptimizerState s = make_optimizer_state(model.parameters());
  const TrainResult r = train(model, s, data, {}, c);
  EXPECT_EQ(r.steps.size(), 4u);
  EXPECT_EQ(snapshot(model.parameters()), before);
}

TEST(Train, OverfitsSinglePair) {
  const std::vector<PairRecord> data = tiny_dataset(1, 31);
  TrainConfig c = loop_config(200, 1);
  MatcherModel model(c.model);
  OptimizerState s = make_optimizer_state(model.parameters());
  const TrainResult r = train(model, s, data, {}, c);
  ASSERT_EQ(r.steps.size(), 200u);
  for (std::size_t k = 0; k + 50 < r.steps.size(); ++k)
    EXPECT_LT(r.steps[k + 50].loss, r.steps[k].loss) << "window starting at step " << r.steps[k].step;
  EXPECT_LT(r.steps.back().loss, 0.5 * r.steps.front().loss);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const std::vector<PairRecord> data = tiny_dataset(5, 41);
  const TrainConfig full = loop_config(6, 2);
  MatcherModel m1(full.model);
  OptimizerState s1 = make_optimizer_state(m1.parameters());
  const TrainResult r1 = train(m1, s1, data, {}, full);

  const auto dir = std::filesystem::temp_directory_path() / "ogm_test_resume";
  std::filesystem::create_directories(dir);
  TrainConfig half = full;
  half.steps = 3;
  MatcherModel m2(full.model);
  OptimizerState s2 = make_optimizer_state(m2.parameters());
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const MatcherModel& m, const OptimizerState& s) {
    save_checkpoint(m, dir / "model.ogck");
    save_optimizer_state(s, dir / "opt.bin");
  };
  train(m2, s2, data, {}, half, hooks);

  MatcherModel m3 = load_checkpoint(dir / "model.ogck");
  OptimizerState s3 = load_optimizer_state(dir / "opt.bin", m3.parameters());
  EXPECT_EQ(s3.step, 3u);
  const TrainResult r3 = train(m3, s3, data, {}, full);
  ASSERT_EQ(r3.steps.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(r3.steps[k].step, r1.steps[k + 3].step);
    EXPECT_EQ(r3.steps[k].loss, r1.steps[k + 3].loss);
  }
  EXPECT_EQ(snapshot(m3.parameters()), snapshot(m1.parameters()));
  std::filesystem::remove_all(dir);
}

TEST(Train, DeterministicGivenSeed) {
  const std::vector<PairRecord> data = tiny_dataset(4, 51);
  const TrainConfig c = loop_config(3, 2);
  MatcherModel a(c.model), b(c.model);
  OptimizerState sa = make_optimizer_state(a.parameters()), sb = make_optimizer_state(b.parameters());
  const TrainResult ra = train(a, sa, data, {}, c), rb = train(b, sb, data, {}, c);
  for (std::size_t k = 0; k < ra.steps.size(); ++k) EXPECT_EQ(ra.steps[k].loss, rb.steps[k].loss);
  EXPECT_EQ(snapshot(a.parameters()), snapshot(b.parameters()));
}

TEST(Train, DivergenceNamesTheStep) {
  const std::vector<PairRecord> data = tiny_dataset(2, 61);
  TrainConfig c = loop_config(5, 1);
  c.optimizer.learning_rate = 1e300;
  MatcherModel model(c.model);
  OptimizerState s = make_optimizer_state(model.parameters());
  try {
    train(model, s, data, {}, c);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_LE(e.step(), 5u);
    EXPECT_NE(std::string(e.what()).find("step " + std::to_string(e.step())), std::string::npos);
  }
}

TEST(Train, EvaluatesAtIntervals) {
  const std::vector<PairRecord> data = tiny_dataset(3, 71);
  TrainConfig c = loop_config(4, 1);
  c.eval_interval = 2;
  MatcherModel model(c.model);
  OptimizerState s = make_optimizer_state(model.parameters());
  const TrainResult r = train(model, s, data, data, c);
  ASSERT_EQ(r.evals.size(), 2u);
  EXPECT_EQ(r.evals[0].step, 2u);
  EXPECT_EQ(r.evals[1].step, 4u);
  EXPECT_EQ(r.evals[1].summary.pairs, 3u);
}

TEST(Train, RejectsEmptyDataset) {
  MatcherModel model(tiny_model());
  OptimizerState s = make_optimizer_state(model.parameters());
  EXPECT_THROW(train(model, s, {}, {}, loop_config(1, 1)), std::invalid_argument);
}

TEST(Checkpoint, RoundTripPreservesParametersAndConfig) {
  std::mt19937_64 rng(3);
  ModelConfig cfg = tiny_model();
  cfg.keep_ratio = 0.4;
  cfg.position_mode = PositionMode::kNone;
  MatcherModel model(cfg);
  testing::randomize_parameters(model.parameters(), rng);
  const auto path = std::filesystem::temp_directory_path() / "ogm_test_ckpt.ogck";
  save_checkpoint(model, path);
  const MatcherModel r = load_checkpoint(path);
  EXPECT_EQ(snapshot(r.parameters()), snapshot(model.parameters()));
  EXPECT_EQ(r.config().keep_ratio, 0.4);
  EXPECT_EQ(r.config().position_mode, PositionMode::kNone);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace ogm
