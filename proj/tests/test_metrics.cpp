#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "metafas/metrics.hpp"

using namespace metafas;
using namespace metafas::metrics;

namespace {

std::vector<ScoredSample> scored_from(const std::vector<double>& living,
                                      const std::vector<double>& spoofing) {
  std::vector<ScoredSample> out;
  for (double s : living) out.push_back({s, Liveness::kLiving});
  for (double s : spoofing) out.push_back({s, Liveness::kSpoofing});
  return out;
}

// All-pairs probability that living outscores spoofing, ties half credit.
double brute_force_auc(const std::vector<ScoredSample>& scored) {
  double wins = 0.0;
  int64_t pairs = 0;
  for (const auto& a : scored) {
    if (a.truth != Liveness::kLiving) continue;
    for (const auto& b : scored) {
      if (b.truth != Liveness::kSpoofing) continue;
      ++pairs;
      if (a.score > b.score) wins += 1.0;
      else if (a.score == b.score) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("classify: definitions and edge cases") {
  // perfectly separated scores
  auto sep = scored_from({0.9, 0.8}, {0.1, 0.2});
  auto r = classify(sep, 0.5);
  CHECK(r.apcer == 0.0);
  CHECK(r.bpcer == 0.0);
  CHECK(r.acer == 0.0);

  // APCER 10%, BPCER 20% -> ACER 15%
  std::vector<ScoredSample> s;
  for (int i = 0; i < 10; ++i) s.push_back({i == 0 ? 1.0 : 0.0, Liveness::kSpoofing});
  for (int i = 0; i < 10; ++i) s.push_back({i < 2 ? 0.0 : 1.0, Liveness::kLiving});
  r = classify(s, 0.5);
  CHECK(r.apcer == doctest::Approx(0.10));
  CHECK(r.bpcer == doctest::Approx(0.20));
  CHECK(r.acer == doctest::Approx(0.15));

  // all scores equal, threshold above them: everything rejected
  auto flat = scored_from({0.5, 0.5}, {0.5});
  r = classify(flat, 0.7);
  CHECK(r.apcer == 0.0);
  CHECK(r.bpcer == 1.0);
  CHECK(r.acer == 0.5);

  CHECK_THROWS_AS(classify(scored_from({0.5}, {}), 0.5), ValueError);
}

TEST_CASE("classify: rates stay in [0,1] and acer is the exact mean") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredSample> s;
    for (int i = 0; i < 9; ++i) s.push_back({dist(rng), Liveness::kLiving});
    for (int i = 0; i < 7; ++i) s.push_back({dist(rng), Liveness::kSpoofing});
    auto r = classify(s, dist(rng));
    CHECK(r.apcer >= 0.0);
    CHECK(r.apcer <= 1.0);
    CHECK(r.bpcer >= 0.0);
    CHECK(r.bpcer <= 1.0);
    CHECK(r.acer == (r.apcer + r.bpcer) / 2.0);
  }
}

TEST_CASE("auc: examples") {
  CHECK(auc(scored_from({0.9, 0.8}, {0.1, 0.2})) == 1.0);
  CHECK(auc(scored_from({0.5, 0.5}, {0.5, 0.5})) == 0.5);
  // 3 of 4 pairs ordered
  CHECK(auc(scored_from({0.9, 0.4}, {0.5, 0.1})) == doctest::Approx(0.75));
  CHECK_THROWS_AS(auc(scored_from({}, {0.5})), ValueError);
}

TEST_CASE("auc equals brute force on random lists up to 200") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::uniform_int_distribution<int> count(1, 100);
  std::uniform_int_distribution<int> quant(1, 8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ScoredSample> s;
    const int nl = count(rng), ns = count(rng);
    const int q = quant(rng);  // quantized scores force ties
    for (int i = 0; i < nl; ++i)
      s.push_back({std::round(dist(rng) * q) / q, Liveness::kLiving});
    for (int i = 0; i < ns; ++i)
      s.push_back({std::round(dist(rng) * q) / q, Liveness::kSpoofing});
    CHECK(auc(s) == doctest::Approx(brute_force_auc(s)).epsilon(1e-12));
  }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<ScoredSample> s;
  for (int i = 0; i < 40; ++i)
    s.push_back({dist(rng), i % 3 == 0 ? Liveness::kLiving : Liveness::kSpoofing});
  const double base = auc(s);
  auto transformed = s;
  for (auto& t : transformed) t.score = std::exp(3.0 * t.score) + 7.0;
  CHECK(auc(transformed) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("aggregate: Eq-style mean and 1.96 sigma/sqrt(T) interval") {
  // {1,2,3,4}% -> mean 2.5%, sample sigma = sqrt(5/3)%, interval 1.96*sigma/2
  std::vector<double> acers = {0.01, 0.02, 0.03, 0.04};
  auto [mean, interval] = aggregate(acers);
  CHECK(std::fabs(mean - 0.025) <= 1e-15);
  const double sigma = std::sqrt((0.015 * 0.015 + 0.005 * 0.005 + 0.005 * 0.005 +
                                  0.015 * 0.015) / 3.0);
  CHECK(std::fabs(interval - 1.96 * sigma / 2.0) <= 1e-15);

  // single observation: sigma defined zero
  auto [m1, i1] = aggregate({0.33});
  CHECK(m1 == 0.33);
  CHECK(i1 == 0.0);

  // constant list (dyadic value so the mean is exact in binary)
  auto [mc, ic] = aggregate({0.25, 0.25, 0.25});
  CHECK(mc == 0.25);
  CHECK(ic == 0.0);

  CHECK_THROWS_AS(aggregate({}), ValueError);
}

TEST_CASE("select_threshold: midpoint of separated classes") {
  CHECK(select_threshold(scored_from({1.0}, {0.0})) == doctest::Approx(0.5));

  // exhaustive sweep oracle: no sample-score threshold beats the returned one
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<ScoredSample> s;
    for (int i = 0; i < 8; ++i) s.push_back({dist(rng), Liveness::kLiving});
    for (int i = 0; i < 8; ++i) s.push_back({dist(rng), Liveness::kSpoofing});
    const double chosen = select_threshold(s);
    const double chosen_acer = classify(s, chosen).acer;
    for (const auto& sample : s) {
      CHECK(chosen_acer <= classify(s, sample.score).acer + 1e-12);
    }
  }
  CHECK_THROWS_AS(select_threshold(scored_from({0.1, 0.2}, {})), ValueError);
}

TEST_CASE("select_threshold: classification invariant under monotone transforms") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<ScoredSample> s;
  for (int i = 0; i < 20; ++i)
    s.push_back({dist(rng), i % 2 == 0 ? Liveness::kLiving : Liveness::kSpoofing});

  const double t1 = select_threshold(s);
  auto labels1 = [&] {
    std::vector<bool> out;
    for (const auto& x : s) out.push_back(x.score >= t1);
    return out;
  }();

  auto transformed = s;
  for (auto& x : transformed) x.score = 10.0 * x.score + 3.0;
  const double t2 = select_threshold(transformed);
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK((transformed[i].score >= t2) == labels1[i]);
  }
}

TEST_CASE("report: aggregate row uses the mean±interval presentation") {
  std::vector<TaskMetrics> per_task = {
      {0.02, 0.06, 0.04, 0.99}, {0.04, 0.08, 0.06, 0.98}, {0.03, 0.07, 0.05, 0.97}};
  EvalReport report = build_report(per_task);
  CHECK(report.task_count == 3);
  CHECK(report.acer_mean == doctest::Approx(0.05));

  std::ostringstream os;
  write_report(os, report);
  const std::string text = os.str();
  CHECK(text.find("acer% 5.00±") != std::string::npos);
  CHECK(text.find("task 0 ") != std::string::npos);
  CHECK(text.find("tasks 3") != std::string::npos);

  CHECK_THROWS_AS(build_report({}), ValueError);
}
