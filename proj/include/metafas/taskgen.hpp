#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "metafas/data.hpp"

namespace metafas {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

/// Fine-grained dataset pool: named living and spoofing categories, each a
/// list of labeled samples. Pools are immutable after construction.
struct FineGrainedPool {
  Split split = Split::kTrain;
  std::map<std::string, std::vector<Sample>> living;
  std::map<std::string, std::vector<Sample>> spoofing;

  int64_t sample_count() const;
  std::vector<const Sample*> all_samples() const;
};

/// One episode. The support set holds the adaptation data (2M samples:
/// M-K from each predefined category plus K from each novel category, or 2K
/// novel-only when predefined categories are dropped); the query set holds
/// 2Q samples drawn solely from the novel pair, disjoint from the support.
struct Task {
  int shots = 0;  // K
  std::vector<Sample> support;
  std::vector<Sample> query;
  std::string predefined_living, predefined_spoofing;
  std::string novel_living, novel_spoofing;
};

struct EpisodeConfig {
  int predefined_per_class = 10;                 // M
  int query_per_class = 15;                      // Q
  std::vector<int> shot_menu = {0, 1, 3, 5, 7, 9};
  bool support_novel_only = false;               // drop predefined categories

  void validate() const;
};

/// Uniform draw from the shot menu; a singleton menu yields fixed-K training.
int sample_shot_count(const EpisodeConfig& config, std::mt19937_64& rng);

/// Builds one K-shot episode. Predefined categories come from
/// `predefined_pool` (the train pool), novel categories from `novel_pool`
/// (train pool for training tasks, test pool for testing tasks). When both
/// pools are the same split, the novel pair is kept distinct from the
/// predefined pair. Samples are drawn without replacement within the task.
Task generate_task(const FineGrainedPool& predefined_pool,
                   const FineGrainedPool& novel_pool, int shots,
                   const EpisodeConfig& config, std::mt19937_64& rng);

/// Texture-family parameters of one synthetic category; recorded so that
/// train/test disjointness is auditable.
struct CategoryParams {
  double frequency = 0.0;
  double angle = 0.0;
  double phase = 0.0;
  double noise = 0.0;
  double base_r = 0.0, base_g = 0.0, base_b = 0.0;
};

struct SyntheticSpec {
  int living_categories = 4;    // per split
  int spoofing_categories = 4;  // per split
  int samples_per_category = 40;
  int image_side = 32;
  int depth_side = 4;
  uint64_t seed = 1;

  void validate() const;
};

struct SyntheticBenchmark {
  FineGrainedPool train, val, test;
  std::map<std::string, CategoryParams> params;  // key: "split/category"
};

/// Deterministic synthetic benchmark: each category is a parameterized
/// texture family; living samples carry smooth depth maps in [0,1] whose
/// shading is visible in the image, spoofing samples carry all-zero depth
/// labels and a high-frequency carrier texture. Frequency bands are disjoint
/// across splits.
SyntheticBenchmark generate_synthetic_benchmark(const SyntheticSpec& spec);

struct ManifestLoadOptions {
  int input_side = 32;
  int depth_side = 4;
};

/// Loads one split's pool from a manifest. The whole file is validated
/// first: unknown tags, split/category overlap and missing files all raise.
/// Record format (tab-separated, '#' comments):
///   split<TAB>category<TAB>liveness<TAB>image_path[<TAB>depth_path]
/// Paths are relative to the manifest's directory. Living samples require a
/// depth companion; spoofing depth labels are zero-filled.
FineGrainedPool load_manifest(const std::string& path, Split split,
                              const ManifestLoadOptions& options);

/// Writes pools as PPM/PGM files plus a combined manifest under out_dir.
/// Returns the manifest path. Byte-identical output for identical pools.
std::string write_benchmark(const std::string& out_dir, const SyntheticBenchmark& bench);

}  // namespace metafas
