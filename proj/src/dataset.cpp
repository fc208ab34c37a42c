#include "ogm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ogm/parallel.hpp"

namespace ogm {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + p.string());
}

}  // namespace

void write_pair(const fs::path& dir, const PairRecord& pair) {
  fs::create_directories(dir);
  write_features(pair.set_a, dir / "a.ogff");
  write_features(pair.set_b, dir / "b.ogff");
  write_text(dir / "gt.json", ground_truth_to_json(pair.gt_transform, pair.gt_matches));
}

PairRecord read_pair(const fs::path& dir) {
  PairRecord p;
  p.set_a = read_features(dir / "a.ogff");
  p.set_b = read_features(dir / "b.ogff");
  auto [gt, matches] = ground_truth_from_json(read_text(dir / "gt.json"));
  p.gt_transform = gt;
  p.gt_matches = std::move(matches);
  return p;
}

std::vector<fs::path> list_pair_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a dataset directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "a.ogff")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PairRecord> load_pairs(const fs::path& root, std::size_t jobs) {
  const auto dirs = list_pair_dirs(root);
  std::vector<PairRecord> out(dirs.size());
  parallel_for(dirs.size(), jobs, [&](std::size_t i) { out[i] = read_pair(dirs[i]); });
  return out;
}

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "sh") return DatasetKind::kHomography;
  if (s == "affine") return DatasetKind::kAffine;
  if (s == "pose") return DatasetKind::kPose;
  throw std::invalid_argument("unknown dataset kind \"" + s + "\" (expected sh, affine or pose)");
}

std::string to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kHomography: return "sh";
    case DatasetKind::kAffine: return "affine";
    case DatasetKind::kPose: return "pose";
  }
  return "?";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string pair_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pair_%05zu", index);
  return buf;
}

GeneratedPair generate_pair(const GenerationConfig& cfg, std::size_t index) {
  std::mt19937_64 rng(derive_seed(cfg.seed, index));
  GeneratedPair out;
  if (cfg.kind == DatasetKind::kPose) {
    out.record = make_pose_pair(cfg.pose, rng);
    out.texture = "none";
    return out;
  }
  if (cfg.textures.empty()) throw std::invalid_argument("no texture kinds configured");
  const TextureKind kind = cfg.textures[index % cfg.textures.size()];
  HomographyPairSpec spec = cfg.spec;
  spec.corner_perturbation = cfg.radius;
  const SurrogateExtractor extractor(cfg.extractor);
  const auto margin = static_cast<std::size_t>(std::ceil(2.0 * cfg.radius)) + 8;
  const WarpKind warp = cfg.kind == DatasetKind::kAffine ? WarpKind::kAffine : WarpKind::kHomography;
  for (std::size_t attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    const GrayImage image = procedural_texture(kind, spec.crop_height + margin, spec.crop_width + margin, rng);
    try {
      SyntheticPair p = make_pair(image, spec, extractor, rng, warp);
      out.record = std::move(p.record);
      out.record.set_a.image_id = pair_dir_name(index) + "/a";
      out.record.set_b.image_id = pair_dir_name(index) + "/b";
      out.texture = to_string(kind);
      out.corner_displacement = p.corner_displacement;
      out.attempts = attempt;
      return out;
    } catch (const PairRejected&) {
    }
  }
  throw PairRejected("pair " + std::to_string(index) + " rejected after " + std::to_string(cfg.max_attempts) +
                     " attempts");
}

std::string generate_dataset(const GenerationConfig& cfg, const fs::path& out, std::size_t jobs) {
  fs::create_directories(out);
  std::vector<nlohmann::json> entries(cfg.pairs);
  parallel_for(cfg.pairs, jobs, [&](std::size_t i) {
    const GeneratedPair g = generate_pair(cfg, i);
    write_pair(out / pair_dir_name(i), g.record);
    entries[i] = {{"dir", pair_dir_name(i)},
                  {"texture", g.texture},
                  {"corner_displacement", g.corner_displacement},
                  {"attempts", g.attempts},
                  {"keypoints_a", g.record.set_a.size()},
                  {"keypoints_b", g.record.set_b.size()},
                  {"gt_matches", g.record.gt_matches ? g.record.gt_matches->size() : 0}};
  });
  nlohmann::json manifest = {{"kind", to_string(cfg.kind)},
                             {"radius", cfg.radius},
                             {"pairs", cfg.pairs},
                             {"seed", cfg.seed},
                             {"entries", entries}};
  const std::string text = manifest.dump(1) + "\n";
  write_text(out / "manifest.json", text);
  return text;
}

}  // namespace ogm
