#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ogm/features.hpp"
#include "ogm/synthdata.hpp"

namespace ogm {

// A pair on disk: <dir>/a.ogff, <dir>/b.ogff, <dir>/gt.json.
void write_pair(const std::filesystem::path& dir, const PairRecord& pair);
PairRecord read_pair(const std::filesystem::path& dir);

// Sorted subdirectories of `root` that hold a pair.
std::vector<std::filesystem::path> list_pair_dirs(const std::filesystem::path& root);
std::vector<PairRecord> load_pairs(const std::filesystem::path& root, std::size_t jobs = 1);

enum class DatasetKind { kHomography, kAffine, kPose };
DatasetKind dataset_kind_from_string(const std::string& s);
std::string to_string(DatasetKind kind);

struct GenerationConfig {
  DatasetKind kind = DatasetKind::kHomography;
  double radius = 100.0;
  std::size_t pairs = 1;
  std::uint64_t seed = 0;
  std::vector<TextureKind> textures{TextureKind::kChecker, TextureKind::kNoise, TextureKind::kBlobs};
  SurrogateExtractorConfig extractor;
  HomographyPairSpec spec;  // corner_perturbation and rng_seed are overridden
  PoseSceneConfig pose;
  std::size_t max_attempts = 20;
};

struct GeneratedPair {
  PairRecord record;
  std::string texture;
  double corner_displacement = 0.0;
  std::size_t attempts = 1;
};

// Pair `index` depends only on (cfg, index), so generation parallelises freely.
GeneratedPair generate_pair(const GenerationConfig& cfg, std::size_t index);

std::string pair_dir_name(std::size_t index);

// Writes pair_XXXXX directories and manifest.json under `out`; returns the manifest text.
std::string generate_dataset(const GenerationConfig& cfg, const std::filesystem::path& out, std::size_t jobs = 1);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ogm
