#include "ogm/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "ogm/dataset.hpp"
#include "ogm/parallel.hpp"

namespace ogm {

LossTarget build_target(const PairRecord& pair, double correct_px, double incorrect_px) {
  const std::size_t n = pair.set_a.size(), m = pair.set_b.size();
  LossTarget t;
  if (has_analytic_transfer(pair.gt_transform)) {
    const std::vector<double> err = transfer_error_matrix(pair.gt_transform, pair.set_a, pair.set_b);
    t.positive_pairs = mutual_nearest_within(err, n, m, correct_px);
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> row_min(n, inf), col_min(m, inf);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double e = err[i * m + j];
        row_min[i] = std::min(row_min[i], e);
        col_min[j] = std::min(col_min[j], e);
        if (e >= correct_px && e <= incorrect_px) t.ignored.emplace_back(i, j);
      }
    for (std::size_t i = 0; i < n; ++i)
      if (row_min[i] > incorrect_px) t.dustbin_a.push_back(i);
    for (std::size_t j = 0; j < m; ++j)
      if (col_min[j] > incorrect_px) t.dustbin_b.push_back(j);
    return t;
  }
  if (!pair.gt_matches) throw std::invalid_argument("pose ground truth without gt_matches cannot be supervised");
  std::vector<bool> used_a(n, false), used_b(m, false);
  for (const auto& [i, j] : *pair.gt_matches) {
    if (i >= n || j >= m) throw std::out_of_range("gt_matches index outside feature set");
    if (used_a[i] || used_b[j]) throw std::invalid_argument("gt_matches is not one-to-one");
    used_a[i] = used_b[j] = true;
    t.positive_pairs.emplace_back(i, j);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!used_a[i]) t.dustbin_a.push_back(i);
  for (std::size_t j = 0; j < m; ++j)
    if (!used_b[j]) t.dustbin_b.push_back(j);
  return t;
}

Var nll_loss(Var log_assignment, const LossTarget& target) {
  if (target.empty()) throw UnsupervisablePair();
  const std::size_t n = log_assignment.rows() - 1, m = log_assignment.cols() - 1;
  std::vector<Var> terms;
  auto term = [&](const std::vector<IndexPair>& idx) {
    if (idx.empty()) return;
    for (const auto& [i, j] : idx)
      if (i > n || j > m) throw std::out_of_range("loss target index outside assignment");
    const Var picked = ops::gather(log_assignment, idx);
    terms.push_back(ops::scale(ops::sum(picked), -1.0 / static_cast<double>(idx.size())));
  };
  term(target.positive_pairs);
  std::vector<IndexPair> idx;
  for (std::size_t i : target.dustbin_a) idx.emplace_back(i, m);
  term(idx);
  idx.clear();
  for (std::size_t j : target.dustbin_b) idx.emplace_back(n, j);
  term(idx);
  Var total = terms.front();
  for (std::size_t k = 1; k < terms.size(); ++k) total = ops::add(total, terms[k]);
  return total;
}

double learning_rate_at(const AdamConfig& cfg, std::size_t step) {
  if (step <= cfg.hinge_step || cfg.decay_rate == 1.0) return cfg.learning_rate;
  return cfg.learning_rate * std::pow(cfg.decay_rate, static_cast<double>(step - cfg.hinge_step));
}

OptimizerState make_optimizer_state(const ParameterStore& store) {
  OptimizerState s;
  for (ParamId id = 0; id < store.size(); ++id) {
    s.m.emplace_back(store[id].size(), 0.0);
    s.v.emplace_back(store[id].size(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& store, const std::vector<Tensor>& grads, OptimizerState& state, const AdamConfig& cfg) {
  if (grads.size() != store.size() || state.m.size() != store.size())
    throw DimensionError("optimizer: parameter count mismatch");
  const double lr = learning_rate_at(cfg, state.step);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (ParamId id = 0; id < store.size(); ++id) {
    const auto g = grads[id].data();
    auto& m = state.m[id];
    auto& v = state.v[id];
    if (g.size() != m.size()) throw DimensionError("optimizer: gradient shape mismatch for " + store.name(id));
    std::vector<double> p(store[id].data().begin(), store[id].data().end());
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.epsilon);
    }
    store.set(id, Tensor(store[id].shape(), std::move(p)));
  }
}

namespace {

constexpr char kOptimizerMagic[4] = {'O', 'G', 'O', 'S'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

void save_optimizer_state(const OptimizerState& state, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(kOptimizerMagic, kOptimizerMagic + 4);
  put_u64(out, state.step);
  put_u64(out, state.m.size());
  for (std::size_t k = 0; k < state.m.size(); ++k) {
    put_u64(out, state.m[k].size());
    for (double x : state.m[k]) put_u64(out, std::bit_cast<std::uint64_t>(x));
    for (double x : state.v[k]) put_u64(out, std::bit_cast<std::uint64_t>(x));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

OptimizerState load_optimizer_state(const std::filesystem::path& path, const ParameterStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open optimizer state " + path.string());
  const std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto u64 = [&]() {
    if (b.size() - pos < 8) throw FormatError("truncated optimizer state", pos);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
    pos += 8;
    return v;
  };
  if (b.size() < 4 || !std::equal(kOptimizerMagic, kOptimizerMagic + 4, b.begin()))
    throw FormatError("bad magic: expected \"OGOS\"", 0);
  pos = 4;
  OptimizerState s;
  s.step = u64();
  const std::uint64_t count = u64();
  if (count != store.size()) throw FormatError("optimizer state parameter count mismatch", pos - 8);
  for (ParamId id = 0; id < count; ++id) {
    const std::uint64_t len = u64();
    if (len != store[id].size()) throw FormatError("optimizer state shape mismatch for " + store.name(id), pos - 8);
    std::vector<double> m(len), v(len);
    for (double& x : m) x = std::bit_cast<double>(u64());
    for (double& x : v) x = std::bit_cast<double>(u64());
    s.m.push_back(std::move(m));
    s.v.push_back(std::move(v));
  }
  return s;
}

// ---- configuration ----

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section \"" + name_ + "\" must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string field(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  template <class T>
  void get(const std::string& key, T& out, bool required = false) {
    const json* v = find(key);
    if (!v) {
      if (required) throw ConfigError("missing required config key: " + field(key));
      return;
    }
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!v->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!v->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError("");
      } else {
        if (!v->is_string()) throw ConfigError("");
      }
      out = v->get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key " + field(key) + " has the wrong type");
    }
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key: " + field(it.key()));
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("invalid value for " + field + ": " + rule);
}

}  // namespace

TrainConfig parse_train_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  Section top(root, "");
  top.get("seed", cfg.seed);

  const json* model_j = top.find("model");
  if (!model_j) throw ConfigError("missing required config key: model");
  Section model(*model_j, "model");
  ModelConfig& mc = cfg.model;
  model.get("descriptor_dim", mc.descriptor_dim, true);
  model.get("guidance_dim", mc.guidance_dim, true);
  model.get("num_blocks", mc.num_blocks, true);
  model.get("num_heads", mc.num_heads);
  model.get("num_frequencies", mc.num_frequencies);
  model.get("encoder_hidden", mc.encoder_hidden);
  model.get("out_hidden", mc.out_hidden);
  model.get("keep_ratio", mc.keep_ratio);
  std::string mode = to_string(mc.position_mode);
  model.get("position_mode", mode);
  try {
    mc.position_mode = position_mode_from_string(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("invalid value for model.position_mode: " + std::string(e.what()));
  }
  model.get("entangled_baseline", mc.entangled_baseline);
  model.get("guidance_on_intra", mc.guidance_on_intra);
  model.get("sinkhorn_iterations", mc.sinkhorn.iterations);
  model.get("temperature", mc.sinkhorn.temperature);
  model.get("initial_dustbin", mc.initial_dustbin);
  mc.init_seed = cfg.seed;
  model.get("init_seed", mc.init_seed);
  model.reject_unknown();
  check(mc.keep_ratio > 0.0 && mc.keep_ratio <= 1.0, "model.keep_ratio", "must lie in (0, 1]");
  check(mc.descriptor_dim > 0, "model.descriptor_dim", "must be positive");
  check(mc.guidance_dim > 0, "model.guidance_dim", "must be positive");
  check(mc.num_blocks >= 1, "model.num_blocks", "must be >= 1");
  check(mc.num_heads >= 1 && mc.descriptor_dim % mc.num_heads == 0, "model.num_heads",
        "must divide model.descriptor_dim");
  check(mc.num_frequencies >= 1 && mc.num_frequencies <= 30, "model.num_frequencies", "must lie in [1, 30]");
  check(mc.sinkhorn.iterations >= 1, "model.sinkhorn_iterations", "must be >= 1");
  check(mc.sinkhorn.temperature > 0.0, "model.temperature", "must be positive");

  if (const json* opt_j = top.find("optimizer")) {
    Section opt(*opt_j, "optimizer");
    AdamConfig& o = cfg.optimizer;
    opt.get("learning_rate", o.learning_rate);
    opt.get("beta1", o.beta1);
    opt.get("beta2", o.beta2);
    opt.get("epsilon", o.epsilon);
    opt.get("decay_rate", o.decay_rate);
    opt.get("hinge_step", o.hinge_step);
    opt.reject_unknown();
    check(o.learning_rate >= 0.0, "optimizer.learning_rate", "must be >= 0");
    check(o.beta1 >= 0.0 && o.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
    check(o.beta2 >= 0.0 && o.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
    check(o.epsilon > 0.0, "optimizer.epsilon", "must be positive");
    check(o.decay_rate > 0.0 && o.decay_rate <= 1.0, "optimizer.decay_rate", "must lie in (0, 1]");
  }

  const json* tr_j = top.find("training");
  if (!tr_j) throw ConfigError("missing required config key: training");
  Section tr(*tr_j, "training");
  tr.get("steps", cfg.steps, true);
  tr.get("batch_size", cfg.batch_size);
  tr.get("eval_interval", cfg.eval_interval);
  tr.get("eval_pairs", cfg.eval_pairs);
  tr.get("checkpoint_interval", cfg.checkpoint_interval);
  tr.get("min_confidence", cfg.min_confidence);
  tr.get("jobs", cfg.jobs);
  tr.reject_unknown();
  check(cfg.batch_size >= 1, "training.batch_size", "must be >= 1");
  check(cfg.min_confidence >= 0.0 && cfg.min_confidence <= 1.0, "training.min_confidence", "must lie in [0, 1]");

  if (const json* data_j = top.find("data")) {
    Section data(*data_j, "data");
    data.get("train", cfg.train_data);
    data.get("val", cfg.val_data);
    data.reject_unknown();
  }
  top.reject_unknown();
  return cfg;
}

std::string train_config_to_json(const TrainConfig& cfg) {
  const ModelConfig& m = cfg.model;
  const json j = {
      {"seed", cfg.seed},
      {"model",
       {{"descriptor_dim", m.descriptor_dim},
        {"guidance_dim", m.guidance_dim},
        {"num_blocks", m.num_blocks},
        {"num_heads", m.num_heads},
        {"num_frequencies", m.num_frequencies},
        {"encoder_hidden", m.encoder_hidden},
        {"out_hidden", m.out_hidden},
        {"keep_ratio", m.keep_ratio},
        {"position_mode", to_string(m.position_mode)},
        {"entangled_baseline", m.entangled_baseline},
        {"guidance_on_intra", m.guidance_on_intra},
        {"sinkhorn_iterations", m.sinkhorn.iterations},
        {"temperature", m.sinkhorn.temperature},
        {"initial_dustbin", m.initial_dustbin},
        {"init_seed", m.init_seed}}},
      {"optimizer",
       {{"learning_rate", cfg.optimizer.learning_rate},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"epsilon", cfg.optimizer.epsilon},
        {"decay_rate", cfg.optimizer.decay_rate},
        {"hinge_step", cfg.optimizer.hinge_step}}},
      {"training",
       {{"steps", cfg.steps},
        {"batch_size", cfg.batch_size},
        {"eval_interval", cfg.eval_interval},
        {"eval_pairs", cfg.eval_pairs},
        {"checkpoint_interval", cfg.checkpoint_interval},
        {"min_confidence", cfg.min_confidence},
        {"jobs", cfg.jobs}}},
      {"data", {{"train", cfg.train_data}, {"val", cfg.val_data}}}};
  return j.dump(2) + "\n";
}

// ---- loop ----

TrainingDiverged::TrainingDiverged(std::size_t step, const std::string& what)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}

PRSummary evaluate_model(const MatcherModel& model, const std::vector<PairRecord>& pairs, double min_confidence,
                         std::size_t jobs) {
  std::vector<CorrespondencePR> per(pairs.size());
  const EvalConfig ec;
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    per[i] = correspondence_pr(model.match(pairs[i].set_a, pairs[i].set_b, min_confidence), pairs[i], ec);
  });
  return summarize_pr(per);
}

PRSummary evaluate_mnn(const std::vector<PairRecord>& pairs) {
  std::vector<CorrespondencePR> per;
  const EvalConfig ec;
  for (const auto& p : pairs)
    per.push_back(correspondence_pr(mutual_nearest_neighbors(p.set_a.descriptor_tensor(), p.set_b.descriptor_tensor()),
                                    p, ec));
  return summarize_pr(per);
}

TrainResult train(MatcherModel& model, OptimizerState& state, const std::vector<PairRecord>& train_set,
                  const std::vector<PairRecord>& val_set, const TrainConfig& cfg, const TrainHooks& hooks) {
  if (train_set.empty()) throw std::invalid_argument("empty training set");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  TrainResult result;
  std::vector<LossTarget> targets(train_set.size());
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    model.check_compatible(train_set[i].set_a);
    model.check_compatible(train_set[i].set_b);
    targets[i] = build_target(train_set[i]);
    if (targets[i].empty() || train_set[i].set_a.size() == 0 || train_set[i].set_b.size() == 0) ++result.skipped_pairs;
    else usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("no supervisable training pairs");

  const std::size_t u = usable.size(), b = cfg.batch_size;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  auto pick = [&](std::size_t k) {
    const std::size_t epoch = k / u;
    if (epoch != cached_epoch) {
      order = usable;
      std::mt19937_64 rng(derive_seed(cfg.seed, 0x7472'0000'0000ULL + epoch));
      std::shuffle(order.begin(), order.end(), rng);
      cached_epoch = epoch;
    }
    return order[k % u];
  };

  ParameterStore& store = model.parameters();
  auto run_eval = [&](std::size_t step) {
    if (val_set.empty()) return;
    EvalRecord r{step, evaluate_model(model, val_set, cfg.min_confidence, cfg.jobs)};
    result.evals.push_back(r);
    if (hooks.on_eval) hooks.on_eval(r);
  };

  std::vector<std::size_t> batch(b);
  std::vector<double> losses(b);
  std::vector<std::vector<Tensor>> grads(b);
  std::vector<std::string> failures(b);
  std::size_t last_eval = static_cast<std::size_t>(-1);
  for (std::size_t s = state.step; s < cfg.steps; ++s) {
    for (std::size_t k = 0; k < b; ++k) batch[k] = pick(s * b + k);
    parallel_for(b, cfg.jobs, [&](std::size_t k) {
      const PairRecord& p = train_set[batch[k]];
      failures[k].clear();
      try {
        Tape tape;
        Binding params(tape, store);
        const ForwardResult fr = model.forward(params, p.set_a, p.set_b);
        const Var loss = nll_loss(fr.log_assignment, targets[batch[k]]);
        losses[k] = loss.value().item();
        tape.backward(loss);
        grads[k] = params.gradients();
      } catch (const NonFiniteError& e) {
        failures[k] = e.what();
      }
    });
    for (std::size_t k = 0; k < b; ++k)
      if (!failures[k].empty())
        throw TrainingDiverged(s + 1, "non-finite value on pair \"" + train_set[batch[k]].set_a.image_id + "\"" + ": " + failures[k]);

    std::vector<Tensor> total;
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      loss_sum += losses[k];
      if (k == 0) {
        total = grads[0];
        continue;
      }
      for (ParamId id = 0; id < total.size(); ++id) {
        std::vector<double> acc(total[id].data().begin(), total[id].data().end());
        const auto g = grads[k][id].data();
        for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += g[e];
        total[id] = Tensor(total[id].shape(), std::move(acc));
      }
    }
    const double mean_loss = loss_sum / static_cast<double>(b);
    if (!std::isfinite(mean_loss)) throw TrainingDiverged(s + 1, "non-finite loss");
    const double lr = learning_rate_at(cfg.optimizer, state.step);
    try {
      adam_step(store, total, state, cfg.optimizer);
    } catch (const NonFiniteError& e) {
      throw TrainingDiverged(s + 1, std::string("non-finite parameter update: ") + e.what());
    }
    StepRecord rec{s + 1, mean_loss, lr};
    result.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (cfg.eval_interval && (s + 1) % cfg.eval_interval == 0) {
      run_eval(s + 1);
      last_eval = s + 1;
    }
    if (cfg.checkpoint_interval && (s + 1) % cfg.checkpoint_interval == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(model, state);
  }
  if (last_eval != state.step) run_eval(state.step);
  if (hooks.on_checkpoint) hooks.on_checkpoint(model, state);
  return result;
}

}  // namespace ogm
