#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <json.hpp>
#include <sstream>
#include <string>

#include "ogm/dataset.hpp"
#include "ogm/geomeval.hpp"
#include "ogm/parallel.hpp"
#include "ogm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ogm;

namespace {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

Level log_level() {
  static const Level level = [] {
    const char* v = std::getenv("OG_LOG");
    const std::string s = v ? v : "info";
    if (s == "error") return Level::kError;
    if (s == "debug") return Level::kDebug;
    return Level::kInfo;
  }();
  return level;
}

void log(Level lv, const std::string& msg) {
  static const char* names[] = {"error", "info", "debug"};
  if (lv <= log_level()) std::cerr << "[" << names[static_cast<int>(lv)] << "] " << msg << "\n";
}

// Usage problems that CLI11 cannot see (bad combinations, unreadable config).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

std::string fmt(double x, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  return buf;
}

// ---- gen-data ----

struct GenArgs {
  std::string kind = "sh";
  double radius = 100.0;
  std::size_t pairs = 1;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t crop = 256;
  std::size_t max_keypoints = 256;
  std::size_t descriptor_dim = 64;
  std::size_t guidance_dim = 32;
  std::vector<std::string> textures;
};

int run_gen_data(const GenArgs& a) {
  GenerationConfig g;
  g.kind = dataset_kind_from_string(a.kind);
  g.radius = a.radius;
  g.pairs = a.pairs;
  g.seed = a.seed;
  g.spec.crop_height = g.spec.crop_width = a.crop;
  g.extractor.max_keypoints = a.max_keypoints;
  g.extractor.descriptor_dim = g.pose.descriptor_dim = a.descriptor_dim;
  g.extractor.guidance_dim = g.pose.guidance_dim = a.guidance_dim;
  if (!a.textures.empty()) {
    g.textures.clear();
    for (const auto& t : a.textures) g.textures.push_back(texture_kind_from_string(t));
  }
  g.spec.validate();
  g.extractor.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const json manifest = json::parse(generate_dataset(g, a.out, a.jobs));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  double worst = 0.0, kp = 0.0;
  for (const auto& e : manifest["entries"]) {
    worst = std::max(worst, e["corner_displacement"].get<double>());
    kp += e["keypoints_a"].get<double>() + e["keypoints_b"].get<double>();
  }
  std::cout << "kind      " << a.kind << "\n"
            << "pairs     " << a.pairs << "\n"
            << "radius    " << fmt(a.radius, 1) << "\n"
            << "max disp  " << fmt(worst, 2) << "\n"
            << "mean kps  " << fmt(a.pairs ? kp / (2.0 * a.pairs) : 0.0, 1) << "\n"
            << "out       " << a.out << "\n";
  log(Level::kInfo, "generated " + std::to_string(a.pairs) + " pairs in " + fmt(secs, 2) + " s");
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config;
  std::string data;
  std::string val;
  std::string out;
  std::string init_checkpoint;
  bool resume = false;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<double> learning_rate;
};

const char* kModelFile = "model.ogck";
const char* kOptimizerFile = "optimizer.ogos";
const char* kMetricsFile = "metrics.jsonl";

std::string step_line(const StepRecord& r) {
  return json{{"step", r.step}, {"loss", r.loss}, {"lr", r.learning_rate}}.dump() + "\n";
}

std::string eval_line(const EvalRecord& r) {
  return json{{"step", r.step}, {"precision", r.summary.precision}, {"recall", r.summary.recall}, {"pairs", r.summary.pairs}}
             .dump() +
         "\n";
}

// Metric lines an uninterrupted run would have written up to `step`.
std::string metrics_prefix(const fs::path& path, std::size_t step, std::size_t eval_interval) {
  if (!fs::exists(path)) return "";
  std::istringstream in(read_text(path));
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::size_t s = j.at("step").get<std::size_t>();
    const bool is_eval = j.contains("precision");
    if (s > step) continue;
    if (is_eval && s == step && !(eval_interval && s % eval_interval == 0)) continue;
    out += line + "\n";
  }
  return out;
}

int run_train(const TrainArgs& a) {
  TrainConfig cfg = parse_train_config(read_text(a.config));
  if (a.steps) cfg.steps = *a.steps;
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.model.init_seed = *a.seed;
  }
  if (a.jobs) cfg.jobs = *a.jobs;
  if (a.learning_rate) {
    if (*a.learning_rate < 0.0) throw ConfigError("invalid value for optimizer.learning_rate: must be >= 0");
    cfg.optimizer.learning_rate = *a.learning_rate;
  }
  if (!a.data.empty()) cfg.train_data = a.data;
  if (!a.val.empty()) cfg.val_data = a.val;
  if (cfg.train_data.empty()) throw UsageError("no training data: pass --data or set data.train");

  std::vector<PairRecord> train_set = load_pairs(cfg.train_data, cfg.jobs);
  if (train_set.empty()) throw UsageError("no pairs under " + cfg.train_data);
  std::vector<PairRecord> val_set;
  if (!cfg.val_data.empty()) {
    val_set = load_pairs(cfg.val_data, cfg.jobs);
  } else if (cfg.eval_pairs > 0) {
    if (cfg.eval_pairs >= train_set.size()) throw ConfigError("invalid value for training.eval_pairs: must be below the dataset size");
    val_set.assign(train_set.end() - static_cast<long>(cfg.eval_pairs), train_set.end());
    train_set.resize(train_set.size() - cfg.eval_pairs);
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  std::optional<MatcherModel> model;
  OptimizerState state;
  std::string metrics;
  if (a.resume && fs::exists(out / kModelFile)) {
    model.emplace(load_checkpoint(out / kModelFile));
    state = load_optimizer_state(out / kOptimizerFile, model->parameters());
    metrics = metrics_prefix(out / kMetricsFile, state.step, cfg.eval_interval);
    log(Level::kInfo, "resuming at step " + std::to_string(state.step));
  } else if (!a.init_checkpoint.empty()) {
    model.emplace(load_checkpoint(a.init_checkpoint));
    const ModelConfig& got = model->config();
    if (got.descriptor_dim != cfg.model.descriptor_dim || got.guidance_dim != cfg.model.guidance_dim ||
        got.num_blocks != cfg.model.num_blocks || got.num_heads != cfg.model.num_heads)
      throw ConfigError("init checkpoint " + a.init_checkpoint + " does not match the model section of the config");
    state = make_optimizer_state(model->parameters());
  } else {
    model.emplace(cfg.model);
    state = make_optimizer_state(model->parameters());
  }
  write_text(out / "config.json", train_config_to_json(cfg));
  write_text(out / kMetricsFile, metrics);

  std::ofstream mf(out / kMetricsFile, std::ios::binary | std::ios::app);
  TrainHooks hooks;
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_step = [&](const StepRecord& r) {
    mf << step_line(r);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log(Level::kDebug, "step " + std::to_string(r.step) + " loss " + fmt(r.loss) + " t=" + fmt(secs, 1) + "s");
  };
  hooks.on_eval = [&](const EvalRecord& r) {
    mf << eval_line(r);
    mf.flush();
    std::cout << "eval  step " << r.step << "  precision " << fmt(r.summary.precision) << "  recall "
              << fmt(r.summary.recall) << "\n";
  };
  hooks.on_checkpoint = [&](const MatcherModel& m, const OptimizerState& s) {
    mf.flush();
    save_checkpoint(m, out / kModelFile);
    save_optimizer_state(s, out / kOptimizerFile);
    log(Level::kDebug, "checkpoint at step " + std::to_string(s.step));
  };

  TrainResult result;
  try {
    result = train(*model, state, train_set, val_set, cfg, hooks);
  } catch (const TrainingDiverged& e) {
    mf.flush();
    log(Level::kError, e.what());
    return 1;
  }
  if (result.skipped_pairs) log(Level::kInfo, std::to_string(result.skipped_pairs) + " unsupervisable pairs skipped");
  std::cout << "steps     " << state.step << "\n";
  if (!result.steps.empty()) std::cout << "loss      " << fmt(result.steps.back().loss) << "\n";
  std::cout << "model     " << (out / kModelFile).string() << "\n";
  return 0;
}

// ---- match ----

struct MatchArgs {
  std::string ckpt;
  std::string a, b;
  std::string data;
  std::string out;
  std::string baseline;
  double min_confidence = kDefaultMinConfidence;
  std::optional<double> keep_ratio;
  std::size_t jobs = 1;
};

MatchList match_pair(const std::optional<MatcherModel>& model, const MatchArgs& args, const FeatureSet& a,
                     const FeatureSet& b) {
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("empty keypoint set");
  if (!model) return mutual_nearest_neighbors(a.descriptor_tensor(), b.descriptor_tensor());
  ForwardOptions opts;
  opts.keep_ratio = args.keep_ratio;
  return extract_matches(model->assign(a, b, opts), args.min_confidence);
}

int run_match(const MatchArgs& args) {
  std::optional<MatcherModel> model;
  if (args.baseline.empty()) {
    if (args.ckpt.empty()) throw UsageError("--ckpt is required unless --baseline mnn is given");
    model.emplace(load_checkpoint(args.ckpt));
  } else if (args.baseline != "mnn") {
    throw UsageError("unknown baseline \"" + args.baseline + "\" (expected mnn)");
  }
  if (model && args.keep_ratio && !(*args.keep_ratio > 0.0 && *args.keep_ratio <= 1.0))
    throw ConfigError("invalid value for keep_ratio: must lie in (0, 1]");

  if (!args.data.empty()) {
    const auto dirs = list_pair_dirs(args.data);
    std::vector<std::size_t> counts(dirs.size());
    parallel_for(dirs.size(), args.jobs, [&](std::size_t k) {
      const PairRecord p = read_pair(dirs[k]);
      if (model) {
        model->check_compatible(p.set_a);
        model->check_compatible(p.set_b);
      }
      const MatchList ml = match_pair(model, args, p.set_a, p.set_b);
      counts[k] = ml.pairs.size();
      write_text(fs::path(args.out) / (dirs[k].filename().string() + ".json"), matches_to_json(ml, p.set_a, p.set_b));
    });
    std::size_t total = 0;
    for (std::size_t c : counts) total += c;
    std::cout << "pairs     " << dirs.size() << "\n"
              << "matches   " << total << "\n"
              << "out       " << args.out << "\n";
    return 0;
  }
  if (args.a.empty() || args.b.empty()) throw UsageError("pass --a and --b, or --data");
  const FeatureSet a = read_features(args.a), b = read_features(args.b);
  if (model) {
    model->check_compatible(a);
    model->check_compatible(b);
  }
  const MatchList ml = match_pair(model, args, a, b);
  write_text(args.out, matches_to_json(ml, a, b));
  std::cout << "keypoints " << a.size() << " / " << b.size() << "\n"
            << "matches   " << ml.pairs.size() << "\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string task;
  std::string pred;
  std::string data;
  std::string out;
  std::string csv;
  std::uint64_t seed = 0;
  std::size_t ransac_iterations = 1000;
};

int run_eval(const EvalArgs& args) {
  const auto dirs = list_pair_dirs(args.data);
  if (dirs.empty()) throw UsageError("no pairs under " + args.data);
  EvalConfig cfg;
  cfg.ransac.seed = args.seed;
  cfg.ransac.iterations = args.ransac_iterations;

  json per = json::array();
  std::ostringstream csv;
  std::vector<CorrespondencePR> prs;
  std::vector<double> pose_errors;
  std::vector<std::vector<double>> pck_rows;
  std::size_t failures = 0;
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    const std::string name = dirs[k].filename().string();
    const PairRecord pair = read_pair(dirs[k]);
    const MatchList ml = matches_from_json(read_text(fs::path(args.pred) / (name + ".json")));
    json rec = {{"pair", name}, {"matches", ml.pairs.size()}};
    if (args.task == "corr") {
      if (!has_analytic_transfer(pair.gt_transform) && !pair.gt_matches)
        throw UsageError("pair " + name + " has no ground truth usable for correspondence metrics");
      const CorrespondencePR r = correspondence_pr(ml, pair, cfg);
      prs.push_back(r);
      rec["correct"] = r.correct;
      rec["incorrect"] = r.incorrect;
      rec["matchable"] = r.matchable;
      rec["precision"] = r.precision ? json(*r.precision) : json(nullptr);
      rec["recall"] = r.recall;
      csv << name << "," << r.correct << "," << r.incorrect << "," << r.matchable << "\n";
    } else if (args.task == "pose") {
      const auto* gt = std::get_if<RelativePoseGT>(&pair.gt_transform);
      if (!gt) throw UsageError("pose task needs relative-pose ground truth (pair " + name + ")");
      const PoseResult p = estimate_pose(matched_points(ml, pair.set_a, pair.set_b), gt->K_a, gt->K_b, cfg.ransac);
      const double err = p.success ? rotation_error_deg(p.R, gt->R) : kPoseFailureDeg;
      failures += !p.success;
      pose_errors.push_back(err);
      rec["success"] = p.success;
      rec["inliers"] = p.inliers;
      rec["rotation_error_deg"] = err;
      csv << name << "," << (p.success ? 1 : 0) << "," << err << "\n";
    } else if (args.task == "pck") {
      const auto* gt = std::get_if<AffineGT>(&pair.gt_transform);
      if (!gt) throw UsageError("pck task needs affine ground truth (pair " + name + ")");
      const PCKResult r = estimate_affine_pck(matched_points(ml, pair.set_a, pair.set_b), gt->A, pair.set_a.height,
                                              pair.set_a.width, cfg);
      failures += r.failed;
      pck_rows.push_back(r.pck);
      rec["failed"] = r.failed;
      rec["pck"] = r.pck;
      csv << name << "," << (r.failed ? 1 : 0);
      for (double v : r.pck) csv << "," << v;
      csv << "\n";
    } else {
      throw UsageError("unknown task \"" + args.task + "\" (expected corr, pose or pck)");
    }
    per.push_back(rec);
  }

  json agg;
  std::ostringstream table;
  if (args.task == "corr") {
    const PRSummary s = summarize_pr(prs);
    agg = {{"precision", s.precision}, {"recall", s.recall}, {"pairs", s.pairs}};
    table << "precision " << fmt(s.precision) << "\nrecall    " << fmt(s.recall) << "\n";
  } else if (args.task == "pose") {
    const PoseSummary s = pose_accuracy_and_auc(pose_errors, cfg.pose_thresholds_deg);
    agg = {{"thresholds_deg", cfg.pose_thresholds_deg}, {"accuracy", s.accuracy}, {"auc", s.auc}, {"failures", failures}};
    table << "tau     acc     auc\n";
    for (std::size_t k = 0; k < s.accuracy.size(); ++k)
      table << fmt(cfg.pose_thresholds_deg[k], 0) << "      " << fmt(s.accuracy[k]) << "  " << fmt(s.auc[k]) << "\n";
  } else {
    std::vector<double> mean(cfg.pck_taus.size(), 0.0);
    for (const auto& row : pck_rows)
      for (std::size_t k = 0; k < row.size(); ++k) mean[k] += row[k] / static_cast<double>(pck_rows.size());
    agg = {{"taus", cfg.pck_taus}, {"pck", mean}, {"failures", failures}};
    table << "tau     pck\n";
    for (std::size_t k = 0; k < mean.size(); ++k) table << fmt(cfg.pck_taus[k], 2) << "    " << fmt(mean[k]) << "\n";
  }
  agg["pairs"] = dirs.size();
  const json report = {{"task", args.task}, {"aggregate", agg}, {"per_pair", per}};
  write_text(args.out, report.dump(1) + "\n");
  if (!args.csv.empty()) write_text(args.csv, csv.str());
  std::cout << table.str() << "pairs     " << dirs.size() << "\n";
  return 0;
}

// ---- bench ----

struct BenchArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::size_t pairs = 0;
  std::size_t repeats = 3;
};

int run_bench(const BenchArgs& args) {
  const MatcherModel model = load_checkpoint(args.ckpt);
  std::vector<PairRecord> data = load_pairs(args.data);
  if (args.pairs && data.size() > args.pairs) data.resize(args.pairs);
  if (data.empty()) throw UsageError("no pairs under " + args.data);
  if (args.repeats == 0) throw UsageError("--repeats must be >= 1");

  const double ratios[2] = {0.5, 1.0};
  std::size_t cross[2] = {0, 0}, self[2] = {0, 0};
  std::vector<double> best(2, std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < args.repeats; ++r) {
    // Alternating the order per repeat keeps warm-up effects from favouring one setting.
    for (int k0 = 0; k0 < 2; ++k0) {
      const int k = (r % 2 == 0) ? k0 : 1 - k0;
      PropagationStats stats;
      ForwardOptions opts;
      opts.keep_ratio = ratios[k];
      opts.stats = &stats;
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& p : data) model.assign(p.set_a, p.set_b, opts);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      best[k] = std::min(best[k], secs / static_cast<double>(data.size()));
      cross[k] = stats.cross_score_pairs;
      self[k] = stats.self_score_pairs;
    }
  }
  const double ratio = best[0] / best[1];
  std::cout << "keep   ms/pair    cross pairs   self pairs   (pair counts summed over the dataset)\n";
  for (int k = 0; k < 2; ++k)
    std::cout << fmt(ratios[k], 1) << "    " << fmt(1e3 * best[k], 2) << "    " << cross[k] << "    " << self[k]
              << "\n";
  std::cout << "time ratio 0.5/1.0  " << fmt(ratio, 3) << "\n";
  if (!args.out.empty()) {
    json j = {{"pairs", data.size()}, {"repeats", args.repeats}, {"time_ratio", ratio}, {"runs", json::array()}};
    for (int k = 0; k < 2; ++k)
      j["runs"].push_back({{"keep_ratio", ratios[k]},
                           {"seconds_per_pair", best[k]},
                           {"cross_score_pairs", cross[k]},
                           {"self_score_pairs", self[k]}});
    write_text(args.out, j.dump(1) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse image matcher with guided pruning and position-guided attention"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate synthetic pair datasets");
  g->add_option("--kind", gen.kind, "sh, affine or pose")->check(CLI::IsMember({"sh", "affine", "pose"}));
  g->add_option("--radius", gen.radius, "Corner perturbation bound in pixels")->check(CLI::NonNegativeNumber);
  g->add_option("--pairs", gen.pairs, "Number of pairs")->required()->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed);
  g->add_option("--jobs", gen.jobs, "Worker threads (0 = all cores)");
  g->add_option("--crop", gen.crop, "Crop side in pixels")->check(CLI::Range(32, 4096));
  g->add_option("--max-keypoints", gen.max_keypoints)->check(CLI::PositiveNumber);
  g->add_option("--descriptor-dim", gen.descriptor_dim)->check(CLI::PositiveNumber);
  g->add_option("--guidance-dim", gen.guidance_dim)->check(CLI::PositiveNumber);
  g->add_option("--textures", gen.textures, "Texture cycle (checker, noise, blobs)")
      ->check(CLI::IsMember({"checker", "noise", "blobs"}));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a matcher");
  t->add_option("--config", tr.config, "JSON config")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Training dataset directory");
  t->add_option("--val", tr.val, "Held-out dataset directory");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--init-checkpoint", tr.init_checkpoint, "Start from these weights")->check(CLI::ExistingFile);
  t->add_flag("--resume", tr.resume, "Continue from <out>/model.ogck and optimizer state");
  t->add_option("--steps", tr.steps);
  t->add_option("--seed", tr.seed);
  t->add_option("--jobs", tr.jobs);
  t->add_option("--lr", tr.learning_rate);
  t->get_option("--resume")->excludes("--init-checkpoint");

  MatchArgs ma;
  auto* m = app.add_subcommand("match", "Match two feature files or a dataset");
  m->add_option("--ckpt", ma.ckpt, "Model checkpoint")->check(CLI::ExistingFile);
  m->add_option("--a", ma.a, "OGFF file of image A")->check(CLI::ExistingFile);
  m->add_option("--b", ma.b, "OGFF file of image B")->check(CLI::ExistingFile);
  m->add_option("--data", ma.data, "Dataset directory; writes <out>/<pair>.json")->check(CLI::ExistingDirectory);
  m->add_option("--out", ma.out, "Output JSON file (or directory with --data)")->required();
  m->add_option("--baseline", ma.baseline, "mnn: mutual nearest neighbours on raw descriptors");
  m->add_option("--min-confidence", ma.min_confidence)->check(CLI::Range(0.0, 1.0));
  m->add_option("--keep-ratio", ma.keep_ratio);
  m->add_option("--jobs", ma.jobs);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predicted matches against ground truth");
  e->add_option("--task", ev.task, "corr, pose or pck")->required()->check(CLI::IsMember({"corr", "pose", "pck"}));
  e->add_option("--pred", ev.pred, "Directory of <pair>.json match files")->required()->check(CLI::ExistingDirectory);
  e->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Report JSON")->required();
  e->add_option("--csv", ev.csv, "Per-pair CSV");
  e->add_option("--seed", ev.seed, "RANSAC seed");
  e->add_option("--ransac-iterations", ev.ransac_iterations)->check(CLI::PositiveNumber);

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Time inference at keep ratios 0.5 and 1.0");
  b->add_option("--ckpt", be.ckpt)->required()->check(CLI::ExistingFile);
  b->add_option("--data", be.data)->required()->check(CLI::ExistingDirectory);
  b->add_option("--out", be.out, "Report JSON");
  b->add_option("--pairs", be.pairs, "Use at most this many pairs");
  b->add_option("--repeats", be.repeats);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return run_gen_data(gen);
    if (*t) return run_train(tr);
    if (*m) return run_match(ma);
    if (*e) return run_eval(ev);
    if (*b) return run_bench(be);
  } catch (const UsageError& err) {
    log(Level::kError, err.what());
    return 2;
  } catch (const ConfigError& err) {
    log(Level::kError, err.what());
    return 2;
  } catch (const std::exception& err) {
    log(Level::kError, err.what());
    return 1;
  }
  return 2;
}
