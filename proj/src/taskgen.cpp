#include "metafas/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "metafas/image_io.hpp"

namespace fs = std::filesystem;

namespace metafas {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    default: return "test";
  }
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "' (expected train|val|test)");
}

int64_t FineGrainedPool::sample_count() const {
  int64_t n = 0;
  for (const auto& [_, v] : living) n += static_cast<int64_t>(v.size());
  for (const auto& [_, v] : spoofing) n += static_cast<int64_t>(v.size());
  return n;
}

std::vector<const Sample*> FineGrainedPool::all_samples() const {
  std::vector<const Sample*> out;
  out.reserve(static_cast<size_t>(sample_count()));
  for (const auto& [_, v] : living)
    for (const auto& s : v) out.push_back(&s);
  for (const auto& [_, v] : spoofing)
    for (const auto& s : v) out.push_back(&s);
  return out;
}

void EpisodeConfig::validate() const {
  std::vector<std::string> problems;
  if (query_per_class < 1) problems.push_back("query_per_class (Q) must be >= 1");
  if (shot_menu.empty()) problems.push_back("shot_menu must be non-empty");
  for (int k : shot_menu) {
    if (k < 0) problems.push_back("shot counts must be >= 0");
    if (k > predefined_per_class) {
      problems.push_back("shot count " + std::to_string(k) +
                         " exceeds predefined_per_class (M) " +
                         std::to_string(predefined_per_class));
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid episode config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValueError(msg);
  }
}

int sample_shot_count(const EpisodeConfig& config, std::mt19937_64& rng) {
  if (config.shot_menu.empty()) throw ValueError("sample_shot_count: empty shot menu");
  if (config.shot_menu.size() == 1) return config.shot_menu[0];
  std::uniform_int_distribution<size_t> dist(0, config.shot_menu.size() - 1);
  return config.shot_menu[dist(rng)];
}

namespace {

std::vector<std::string> category_names(const std::map<std::string, std::vector<Sample>>& m) {
  std::vector<std::string> names;
  names.reserve(m.size());
  for (const auto& [k, _] : m) names.push_back(k);
  return names;
}

std::string pick_category(const std::vector<std::string>& names,
                          const std::string& exclude, std::mt19937_64& rng,
                          const char* role) {
  std::vector<std::string> eligible;
  eligible.reserve(names.size());
  for (const auto& n : names) {
    if (n != exclude) eligible.push_back(n);
  }
  if (eligible.empty()) {
    throw ValueError(std::string("generate_task: no eligible ") + role +
                     " category (need at least 2 per liveness within a split)");
  }
  std::uniform_int_distribution<size_t> dist(0, eligible.size() - 1);
  return eligible[dist(rng)];
}

// n distinct samples, drawn without replacement via partial Fisher-Yates.
std::vector<Sample> draw_samples(const std::vector<Sample>& from, int n,
                                 const std::string& category, std::mt19937_64& rng) {
  if (static_cast<int>(from.size()) < n) {
    throw ValueError("generate_task: category '" + category + "' has " +
                     std::to_string(from.size()) + " samples, needs " + std::to_string(n));
  }
  std::vector<size_t> idx(from.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<size_t> dist(i, idx.size() - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[dist(rng)]);
    out.push_back(from[idx[static_cast<size_t>(i)]]);
  }
  return out;
}

}  // namespace

Task generate_task(const FineGrainedPool& predefined_pool,
                   const FineGrainedPool& novel_pool, int shots,
                   const EpisodeConfig& config, std::mt19937_64& rng) {
  config.validate();
  const int m = config.predefined_per_class;
  const int q = config.query_per_class;
  if (shots < 0 || shots > m) {
    throw ValueError("generate_task: K=" + std::to_string(shots) +
                     " outside [0, M=" + std::to_string(m) + "]");
  }
  if (config.support_novel_only && shots == 0) {
    throw ValueError("generate_task: novel-only support is empty for zero-shot tasks");
  }

  const bool same_split = predefined_pool.split == novel_pool.split;
  auto require_categories = [&](const FineGrainedPool& pool, const char* which) {
    const size_t need = same_split ? 2 : 1;
    if (pool.living.size() < need || pool.spoofing.size() < need) {
      throw ValueError(std::string("generate_task: ") + which + " pool has " +
                       std::to_string(pool.living.size()) + " living / " +
                       std::to_string(pool.spoofing.size()) + " spoofing categories, needs " +
                       std::to_string(need) + " of each");
    }
  };
  require_categories(predefined_pool, "predefined");
  require_categories(novel_pool, "novel");

  Task task;
  task.shots = shots;

  const auto pre_living = category_names(predefined_pool.living);
  const auto pre_spoof = category_names(predefined_pool.spoofing);
  std::uniform_int_distribution<size_t> dl(0, pre_living.size() - 1);
  task.predefined_living = pre_living[dl(rng)];
  std::uniform_int_distribution<size_t> ds(0, pre_spoof.size() - 1);
  task.predefined_spoofing = pre_spoof[ds(rng)];

  const auto nov_living = category_names(novel_pool.living);
  const auto nov_spoof = category_names(novel_pool.spoofing);
  task.novel_living = pick_category(
      nov_living, same_split ? task.predefined_living : std::string(), rng, "novel living");
  task.novel_spoofing = pick_category(
      nov_spoof, same_split ? task.predefined_spoofing : std::string(), rng, "novel spoofing");

  std::vector<Sample> pre_l, pre_s;
  if (!config.support_novel_only) {
    pre_l = draw_samples(predefined_pool.living.at(task.predefined_living), m - shots,
                         task.predefined_living, rng);
    pre_s = draw_samples(predefined_pool.spoofing.at(task.predefined_spoofing), m - shots,
                         task.predefined_spoofing, rng);
  }
  std::vector<Sample> nov_l = draw_samples(novel_pool.living.at(task.novel_living),
                                           shots + q, task.novel_living, rng);
  std::vector<Sample> nov_s = draw_samples(novel_pool.spoofing.at(task.novel_spoofing),
                                           shots + q, task.novel_spoofing, rng);

  task.support.reserve(pre_l.size() + pre_s.size() + 2 * static_cast<size_t>(shots));
  task.support.insert(task.support.end(), pre_l.begin(), pre_l.end());
  task.support.insert(task.support.end(), pre_s.begin(), pre_s.end());
  task.support.insert(task.support.end(), nov_l.begin(), nov_l.begin() + shots);
  task.support.insert(task.support.end(), nov_s.begin(), nov_s.begin() + shots);

  task.query.reserve(2 * static_cast<size_t>(q));
  task.query.insert(task.query.end(), nov_l.begin() + shots, nov_l.end());
  task.query.insert(task.query.end(), nov_s.begin() + shots, nov_s.end());
  return task;
}

void SyntheticSpec::validate() const {
  std::vector<std::string> problems;
  if (living_categories < 2) problems.push_back("need >= 2 living categories per split");
  if (spoofing_categories < 2) problems.push_back("need >= 2 spoofing categories per split");
  if (samples_per_category < 1) problems.push_back("samples_per_category must be >= 1");
  if (image_side < 4) problems.push_back("image_side must be >= 4");
  if (depth_side < 1) problems.push_back("depth_side must be >= 1");
  if (image_side % depth_side != 0) {
    problems.push_back("image_side must be a multiple of depth_side");
  }
  if (!problems.empty()) {
    std::string msg = "invalid synthetic spec:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValueError(msg);
  }
}

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// Disjoint carrier-frequency bands per split, the knob that makes categories
// of different splits genuinely different populations. Values are cycles per
// 32-pixel image and scale with the configured side to stay below Nyquist.
double band_lo(Split s, bool spoofing) {
  const double base = spoofing ? 7.5 : 2.0;
  switch (s) {
    case Split::kTrain: return base;
    case Split::kVal: return base + (spoofing ? 2.5 : 1.8);
    default: return base + (spoofing ? 5.0 : 3.6);
  }
}

struct BumpParams {
  double cx, cy, sigma, peak;
};

double bump_at(const BumpParams& b, double u, double v) {
  const double dx = u - b.cx;
  const double dy = v - b.cy;
  return b.peak * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
}

Sample make_synthetic_sample(const CategoryParams& cat, const std::string& name,
                             Liveness liveness, const SyntheticSpec& spec,
                             std::mt19937_64& rng, int64_t uid) {
  const int s = spec.image_side;
  const int d = spec.depth_side;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Sample sample;
  sample.category = name;
  sample.uid = uid;
  sample.label.liveness = liveness;

  std::vector<double> img(static_cast<size_t>(s) * s * 3);
  const double ca = std::cos(cat.angle), sa = std::sin(cat.angle);
  const double base[3] = {cat.base_r, cat.base_g, cat.base_b};

  // Both classes show a shaded face dome (a printed or replayed face still
  // depicts one); what separates them is the presentation-attack carrier
  // texture, whose band is category-specific and split-disjoint. Only living
  // samples get a true depth label.
  BumpParams bump;
  bump.cx = 0.3 + 0.4 * unit(rng);
  bump.cy = 0.3 + 0.4 * unit(rng);
  bump.sigma = 0.18 + 0.14 * unit(rng);
  bump.peak = 0.7 + 0.3 * unit(rng);

  const bool living = liveness == Liveness::kLiving;
  const double damp = living ? 1.0 : 0.55 + 0.4 * unit(rng);
  const double carrier_amp = living ? 0.05 : 0.18;
  const double jitter = 0.04 * (unit(rng) - 0.5);

  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const double u = (j + 0.5) / s, v = (i + 0.5) / s;
      const double shade = 0.35 + 0.65 * damp * bump_at(bump, u, v) + jitter;
      const double carrier =
          std::sin(kTau * cat.frequency * (u * ca + v * sa) + cat.phase);
      for (int c = 0; c < 3; ++c) {
        double val = base[c] * shade + carrier_amp * carrier + cat.noise * gauss(rng);
        img[(static_cast<size_t>(i) * s + j) * 3 + c] = std::clamp(val, 0.0, 1.0);
      }
    }

  if (living) {
    std::vector<double> depth(static_cast<size_t>(d) * d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        const double u = (j + 0.5) / d, v = (i + 0.5) / d;
        depth[static_cast<size_t>(i) * d + j] = std::clamp(bump_at(bump, u, v), 0.0, 1.0);
      }
    sample.label.map = Tensor::from_values({d, d, 1}, std::move(depth));
  } else {
    sample.label.map = Tensor::zeros({d, d, 1});
  }

  sample.image = Tensor::from_values({s, s, 3}, std::move(img));
  sample.label.validate();
  return sample;
}

}  // namespace

SyntheticBenchmark generate_synthetic_benchmark(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticBenchmark bench;
  bench.train.split = Split::kTrain;
  bench.val.split = Split::kVal;
  bench.test.split = Split::kTest;

  int64_t uid = 0;
  int living_serial = 0, print_serial = 0, replay_serial = 0;

  auto build_split = [&](FineGrainedPool& pool, Split split) {
    const double freq_scale = spec.image_side / 32.0;
    for (int c = 0; c < spec.living_categories; ++c) {
      CategoryParams cat;
      cat.frequency = (band_lo(split, false) + 1.6 * unit(rng)) * freq_scale;
      cat.angle = kTau * unit(rng);
      cat.phase = kTau * unit(rng);
      cat.noise = 0.01 + 0.03 * unit(rng);
      cat.base_r = 0.55 + 0.3 * unit(rng);
      cat.base_g = 0.35 + 0.3 * unit(rng);
      cat.base_b = 0.25 + 0.3 * unit(rng);
      const std::string name = "Living" + std::to_string(++living_serial);
      auto& list = pool.living[name];
      for (int i = 0; i < spec.samples_per_category; ++i) {
        list.push_back(make_synthetic_sample(cat, name, Liveness::kLiving, spec, rng, uid++));
      }
      bench.params[std::string(split_name(split)) + "/" + name] = cat;
    }
    for (int c = 0; c < spec.spoofing_categories; ++c) {
      CategoryParams cat;
      cat.frequency = (band_lo(split, true) + 2.2 * unit(rng)) * freq_scale;
      cat.angle = kTau * unit(rng);
      cat.phase = kTau * unit(rng);
      cat.noise = 0.01 + 0.04 * unit(rng);
      cat.base_r = 0.55 + 0.3 * unit(rng);
      cat.base_g = 0.35 + 0.3 * unit(rng);
      cat.base_b = 0.25 + 0.3 * unit(rng);
      const std::string name = (c % 2 == 0)
                                   ? "Print" + std::to_string(++print_serial)
                                   : "Replay" + std::to_string(++replay_serial);
      auto& list = pool.spoofing[name];
      for (int i = 0; i < spec.samples_per_category; ++i) {
        list.push_back(
            make_synthetic_sample(cat, name, Liveness::kSpoofing, spec, rng, uid++));
      }
      bench.params[std::string(split_name(split)) + "/" + name] = cat;
    }
  };

  build_split(bench.train, Split::kTrain);
  build_split(bench.val, Split::kVal);
  build_split(bench.test, Split::kTest);
  return bench;
}

namespace {

struct ManifestRecord {
  Split split;
  std::string category;
  Liveness liveness;
  std::string image_path;
  std::string depth_path;  // empty for spoofing
};

std::vector<ManifestRecord> parse_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open '" + path + "'");

  std::vector<ManifestRecord> records;
  std::map<std::string, Split> category_split;
  std::map<std::string, Liveness> category_liveness;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string split_tag, category, liveness_tag, image_path, depth_path;
    std::getline(ls, split_tag, '\t');
    std::getline(ls, category, '\t');
    std::getline(ls, liveness_tag, '\t');
    std::getline(ls, image_path, '\t');
    std::getline(ls, depth_path, '\t');
    if (split_tag.empty() || category.empty() || liveness_tag.empty() ||
        image_path.empty()) {
      throw DataError("manifest: malformed record at " + path + ":" +
                      std::to_string(line_no));
    }

    ManifestRecord rec;
    try {
      rec.split = split_from_name(split_tag);
      rec.liveness = liveness_from_name(liveness_tag);
    } catch (const DataError& e) {
      throw DataError(std::string(e.what()) + " at " + path + ":" + std::to_string(line_no));
    }
    rec.category = category;
    rec.image_path = image_path;
    rec.depth_path = depth_path;

    auto [split_it, fresh] = category_split.emplace(category, rec.split);
    if (!fresh && split_it->second != rec.split) {
      throw DataError("manifest: category '" + category + "' listed in both " +
                      split_name(split_it->second) + " and " + split_name(rec.split) +
                      " splits");
    }
    auto [live_it, fresh_l] = category_liveness.emplace(category, rec.liveness);
    if (!fresh_l && live_it->second != rec.liveness) {
      throw DataError("manifest: category '" + category + "' carries both liveness tags");
    }
    if (rec.liveness == Liveness::kLiving && rec.depth_path.empty()) {
      throw DataError("manifest: living sample without depth label at " + path + ":" +
                      std::to_string(line_no));
    }
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw DataError("manifest: '" + path + "' holds no records");
  return records;
}

}  // namespace

FineGrainedPool load_manifest(const std::string& path, Split split,
                              const ManifestLoadOptions& options) {
  const auto records = parse_manifest(path);
  const fs::path base = fs::path(path).parent_path();

  FineGrainedPool pool;
  pool.split = split;
  int64_t uid = 0;
  for (const auto& rec : records) {
    ++uid;  // uids are global line positions so cross-pool identities stay unique
    if (rec.split != split) continue;

    Sample sample;
    sample.category = rec.category;
    sample.uid = uid;
    sample.label.liveness = rec.liveness;

    Tensor image = read_ppm((base / rec.image_path).string());
    sample.image = resize_bilinear(image, options.input_side);

    if (rec.liveness == Liveness::kLiving) {
      Tensor depth = read_pgm((base / rec.depth_path).string());
      sample.label.map = resize_bilinear(depth, options.depth_side);
    } else {
      sample.label.map = Tensor::zeros({options.depth_side, options.depth_side, 1});
    }
    sample.label.validate();

    auto& bucket = rec.liveness == Liveness::kLiving ? pool.living : pool.spoofing;
    bucket[rec.category].push_back(std::move(sample));
  }

  if (pool.living.empty() || pool.spoofing.empty()) {
    throw DataError("manifest: split '" + std::string(split_name(split)) + "' in '" + path +
                    "' has " + std::to_string(pool.living.size()) + " living and " +
                    std::to_string(pool.spoofing.size()) +
                    " spoofing categories; need at least one of each");
  }
  return pool;
}

std::string write_benchmark(const std::string& out_dir, const SyntheticBenchmark& bench) {
  const fs::path root(out_dir);
  fs::create_directories(root);

  std::ostringstream manifest;
  manifest << "# fas-benchmark manifest v1\n";

  auto write_pool = [&](const FineGrainedPool& pool) {
    const std::string split = split_name(pool.split);
    auto write_side = [&](const std::map<std::string, std::vector<Sample>>& side,
                          Liveness liveness) {
      for (const auto& [category, samples] : side) {
        const fs::path img_dir = root / "images" / split / category;
        fs::create_directories(img_dir);
        const fs::path depth_dir = root / "depths" / split / category;
        if (liveness == Liveness::kLiving) fs::create_directories(depth_dir);
        for (size_t i = 0; i < samples.size(); ++i) {
          const std::string stem = std::to_string(i);
          const fs::path img_rel = fs::path("images") / split / category / (stem + ".ppm");
          write_ppm((root / img_rel).string(), samples[i].image);
          manifest << split << "\t" << category << "\t" << liveness_name(liveness) << "\t"
                   << img_rel.generic_string();
          if (liveness == Liveness::kLiving) {
            const fs::path depth_rel =
                fs::path("depths") / split / category / (stem + ".pgm");
            write_pgm((root / depth_rel).string(), samples[i].label.map);
            manifest << "\t" << depth_rel.generic_string();
          }
          manifest << "\n";
        }
      }
    };
    write_side(pool.living, Liveness::kLiving);
    write_side(pool.spoofing, Liveness::kSpoofing);
  };
  write_pool(bench.train);
  write_pool(bench.val);
  write_pool(bench.test);

  const fs::path manifest_path = root / "manifest.txt";
  std::ofstream out(manifest_path);
  if (!out) throw DataError("benchmark: cannot write '" + manifest_path.string() + "'");
  out << manifest.str();
  return manifest_path.string();
}

}  // namespace metafas
