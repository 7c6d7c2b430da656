#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "metafas/image_io.hpp"
#include "metafas/taskgen.hpp"

using namespace metafas;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec(uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.living_categories = 3;
  spec.spoofing_categories = 3;
  spec.samples_per_category = 30;
  spec.image_side = 16;
  spec.depth_side = 2;
  spec.seed = seed;
  return spec;
}

EpisodeConfig paper_episode() {
  EpisodeConfig e;
  e.predefined_per_class = 10;
  e.query_per_class = 15;
  e.shot_menu = {0, 1, 3, 5, 7, 9};
  return e;
}

std::set<int64_t> uids(const std::vector<Sample>& samples) {
  std::set<int64_t> out;
  for (const auto& s : samples) out.insert(s.uid);
  return out;
}

}  // namespace

TEST_CASE("default shot menu matches the mixing set") {
  EpisodeConfig e;
  CHECK(e.shot_menu == std::vector<int>{0, 1, 3, 5, 7, 9});
  CHECK(e.predefined_per_class == 10);
  CHECK(e.query_per_class == 15);
}

TEST_CASE("shot sampling: singleton menu and uniform frequencies") {
  EpisodeConfig e = paper_episode();
  std::mt19937_64 rng(5);

  e.shot_menu = {5};
  for (int i = 0; i < 50; ++i) CHECK(sample_shot_count(e, rng) == 5);

  e.shot_menu = {0, 1, 3, 5, 7, 9};
  std::map<int, int> counts;
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[sample_shot_count(e, rng)]++;
  REQUIRE(counts.size() == 6);
  for (const auto& [k, n] : counts) {
    const double freq = static_cast<double>(n) / draws;
    INFO("k=", k, " freq=", freq);
    CHECK(std::fabs(freq - 1.0 / 6.0) <= 0.02);
  }
}

TEST_CASE("task sizes: K=5, M=10, Q=15 gives 20 support / 30 query") {
  SyntheticBenchmark bench = generate_synthetic_benchmark(small_spec());
  EpisodeConfig e = paper_episode();
  std::mt19937_64 rng(7);
  Task t = generate_task(bench.train, bench.test, 5, e, rng);
  CHECK(t.support.size() == 20);
  CHECK(t.query.size() == 30);
  CHECK(t.shots == 5);
}

TEST_CASE("zero-shot support holds predefined categories only") {
  SyntheticBenchmark bench = generate_synthetic_benchmark(small_spec());
  EpisodeConfig e = paper_episode();
  std::mt19937_64 rng(11);
  Task t = generate_task(bench.train, bench.test, 0, e, rng);
  CHECK(t.support.size() == 20);
  for (const auto& s : t.support) {
    CHECK(s.category != t.novel_living);
    CHECK(s.category != t.novel_spoofing);
    CHECK((s.category == t.predefined_living || s.category == t.predefined_spoofing));
  }
  for (const auto& q : t.query) {
    CHECK((q.category == t.novel_living || q.category == t.novel_spoofing));
  }
}

TEST_CASE("novel-only support shrinks to 2K and rejects K=0") {
  SyntheticBenchmark bench = generate_synthetic_benchmark(small_spec());
  EpisodeConfig e = paper_episode();
  e.support_novel_only = true;
  std::mt19937_64 rng(13);
  Task t = generate_task(bench.train, bench.test, 3, e, rng);
  CHECK(t.support.size() == 6);
  for (const auto& s : t.support) {
    CHECK((s.category == t.novel_living || s.category == t.novel_spoofing));
  }
  CHECK_THROWS_AS(generate_task(bench.train, bench.test, 0, e, rng), ValueError);
}

TEST_CASE("task invariants hold across the menu (property test)") {
  SyntheticBenchmark bench = generate_synthetic_benchmark(small_spec(3));
  EpisodeConfig e = paper_episode();
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 600; ++trial) {
    const int k = sample_shot_count(e, rng);
    // alternate within-split (training) and cross-split (testing) tasks
    const bool testing = trial % 2 == 0;
    const FineGrainedPool& novel = testing ? bench.test : bench.train;
    Task t = generate_task(bench.train, novel, k, e, rng);

    CHECK(t.support.size() == 20);
    CHECK(t.query.size() == 30);

    // support/query sample disjointness
    auto s_uids = uids(t.support);
    auto q_uids = uids(t.query);
    CHECK(s_uids.size() == t.support.size());
    CHECK(q_uids.size() == t.query.size());
    for (int64_t u : q_uids) CHECK(s_uids.count(u) == 0);

    // category provenance
    CHECK(t.predefined_living != t.novel_living);
    CHECK(t.predefined_spoofing != t.novel_spoofing);
    if (k == 0) {
      for (const auto& s : t.support) {
        CHECK(s.category != t.novel_living);
        CHECK(s.category != t.novel_spoofing);
      }
    }
    // novel categories come from the right split
    CHECK(novel.living.count(t.novel_living) == 1);
    CHECK(novel.spoofing.count(t.novel_spoofing) == 1);

    // query holds Q of each novel class
    int n_living = 0;
    for (const auto& q : t.query) {
      if (q.label.liveness == Liveness::kLiving) ++n_living;
    }
    CHECK(n_living == 15);
  }
}

TEST_CASE("task generation is reproducible for a fixed seed") {
  SyntheticBenchmark bench = generate_synthetic_benchmark(small_spec());
  EpisodeConfig e = paper_episode();
  std::mt19937_64 r1(23), r2(23);
  Task a = generate_task(bench.train, bench.test, 3, e, r1);
  Task b = generate_task(bench.train, bench.test, 3, e, r2);
  CHECK(a.novel_living == b.novel_living);
  CHECK(uids(a.support) == uids(b.support));
  CHECK(uids(a.query) == uids(b.query));
}

TEST_CASE("task generation errors name the deficit") {
  SyntheticSpec spec = small_spec();
  spec.samples_per_category = 6;  // < K+Q
  SyntheticBenchmark bench = generate_synthetic_benchmark(spec);
  EpisodeConfig e = paper_episode();
  std::mt19937_64 rng(29);
  try {
    generate_task(bench.train, bench.test, 5, e, rng);
    FAIL("expected ValueError");
  } catch (const ValueError& err) {
    const std::string msg = err.what();
    CHECK(msg.find("has 6 samples, needs") != std::string::npos);
  }
  CHECK_THROWS_AS(generate_task(bench.train, bench.test, 11, e, rng), ValueError);

  // a one-category pool cannot host within-split novel sampling
  FineGrainedPool thin = bench.train;
  thin.living.erase(std::next(thin.living.begin()), thin.living.end());
  CHECK_THROWS_AS(generate_task(thin, thin, 0, e, rng), ValueError);
}

TEST_CASE("synthetic benchmark: determinism, zero spoof labels, disjoint splits") {
  SyntheticSpec spec = small_spec(41);
  SyntheticBenchmark a = generate_synthetic_benchmark(spec);
  SyntheticBenchmark b = generate_synthetic_benchmark(spec);

  REQUIRE(a.train.living.size() == 3);
  REQUIRE(a.train.spoofing.size() == 3);
  const auto& cat = a.train.living.begin()->first;
  CHECK(a.train.living.at(cat)[0].image.values() == b.train.living.at(cat)[0].image.values());

  for (const auto& [name, samples] : a.test.spoofing) {
    for (const auto& s : samples) {
      for (double v : s.label.map.values()) CHECK(v == 0.0);
    }
  }
  for (const auto& [name, samples] : a.train.living) {
    for (const auto& s : samples) {
      for (double v : s.label.map.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  // split category names and carrier bands are disjoint
  std::set<std::string> train_names, test_names;
  for (const auto& [n, _] : a.train.living) train_names.insert(n);
  for (const auto& [n, _] : a.train.spoofing) train_names.insert(n);
  for (const auto& [n, _] : a.test.living) test_names.insert(n);
  for (const auto& [n, _] : a.test.spoofing) test_names.insert(n);
  for (const auto& n : test_names) CHECK(train_names.count(n) == 0);

  double train_max = 0.0, test_min = 1e9;
  for (const auto& [key, params] : a.params) {
    const bool spoof = key.find("Print") != std::string::npos ||
                       key.find("Replay") != std::string::npos;
    if (spoof) continue;
    if (key.rfind("train/", 0) == 0) train_max = std::max(train_max, params.frequency);
    if (key.rfind("test/", 0) == 0) test_min = std::min(test_min, params.frequency);
  }
  CHECK(train_max < test_min);

  SyntheticSpec bad = spec;
  bad.living_categories = 1;
  CHECK_THROWS_AS(generate_synthetic_benchmark(bad), ValueError);
}

TEST_CASE("benchmark files round-trip through the manifest loader") {
  const fs::path dir = fs::temp_directory_path() / "metafas_bench_test";
  fs::remove_all(dir);
  SyntheticSpec spec = small_spec(43);
  spec.samples_per_category = 8;
  SyntheticBenchmark bench = generate_synthetic_benchmark(spec);
  const std::string manifest = write_benchmark(dir.string(), bench);
  CHECK(fs::exists(manifest));

  ManifestLoadOptions options;
  options.input_side = 16;
  options.depth_side = 2;
  FineGrainedPool test_pool = load_manifest(manifest, Split::kTest, options);
  CHECK(test_pool.living.size() == 3);
  CHECK(test_pool.spoofing.size() == 3);
  CHECK(test_pool.sample_count() == 6 * 8);
  for (const auto& [name, samples] : test_pool.living) {
    for (const auto& s : samples) {
      CHECK(s.image.shape() == Shape{16, 16, 3});
      CHECK(s.label.map.shape() == Shape{2, 2, 1});
      s.label.validate();
    }
  }

  // same benchmark written twice is byte-identical
  const fs::path dir2 = fs::temp_directory_path() / "metafas_bench_test2";
  fs::remove_all(dir2);
  write_benchmark(dir2.string(), generate_synthetic_benchmark(spec));
  std::ifstream m1(manifest), m2(dir2 / "manifest.txt");
  std::stringstream s1, s2;
  s1 << m1.rdbuf();
  s2 << m2.rdbuf();
  CHECK(s1.str() == s2.str());
  REQUIRE(!s1.str().empty());

  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("manifest validation failures") {
  const fs::path dir = fs::temp_directory_path() / "metafas_manifest_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ManifestLoadOptions options;
  options.input_side = 16;
  options.depth_side = 2;

  auto write_manifest = [&](const std::string& body) {
    std::ofstream out(dir / "manifest.txt");
    out << body;
    out.close();
    return (dir / "manifest.txt").string();
  };

  CHECK_THROWS_AS(load_manifest((dir / "missing.txt").string(), Split::kTest, options),
                  DataError);

  // unknown liveness tag
  auto path = write_manifest("test\tCatA\talive\timg.ppm\n");
  CHECK_THROWS_AS(load_manifest(path, Split::kTest, options), DataError);

  // category in two splits
  path = write_manifest(
      "train\tCatA\tspoofing\timg.ppm\n"
      "test\tCatA\tspoofing\timg.ppm\n");
  try {
    load_manifest(path, Split::kTest, options);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("both") != std::string::npos);
  }

  // living sample without a depth companion
  path = write_manifest("test\tCatA\tliving\timg.ppm\n");
  CHECK_THROWS_AS(load_manifest(path, Split::kTest, options), DataError);

  // empty record set
  path = write_manifest("# nothing here\n");
  CHECK_THROWS_AS(load_manifest(path, Split::kTest, options), DataError);

  // image file missing on disk
  path = write_manifest("test\tCatA\tspoofing\tmissing.ppm\ntest\tCatB\tliving\tmissing2.ppm\tdepth.pgm\n");
  CHECK_THROWS_AS(load_manifest(path, Split::kTest, options), DataError);

  fs::remove_all(dir);
}

TEST_CASE("image io: ppm round trip and bilinear resize") {
  const fs::path dir = fs::temp_directory_path() / "metafas_img_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  std::mt19937_64 rng(47);
  Tensor img = rand_uniform({8, 6, 3}, rng);
  write_ppm((dir / "x.ppm").string(), img);
  Tensor back = read_ppm((dir / "x.ppm").string());
  REQUIRE(back.shape() == Shape{8, 6, 3});
  for (int64_t i = 0; i < img.size(); ++i) {
    CHECK(std::fabs(back.values()[i] - img.values()[i]) <= 0.5 / 255.0 + 1e-12);
  }

  // constant image stays constant under resize
  Tensor flat = Tensor::full({8, 8, 1}, 0.25);
  Tensor resized = resize_bilinear(flat, 5);
  REQUIRE(resized.shape() == Shape{5, 5, 1});
  for (double v : resized.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS(read_ppm((dir / "nothing.ppm").string()), DataError);
  fs::remove_all(dir);
}
