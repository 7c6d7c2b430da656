#include "metafas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "metafas/errors.hpp"

namespace metafas {
namespace metrics {

namespace {

void check_both_classes(const char* op, const std::vector<ScoredSample>& scored) {
  int living = 0, spoofing = 0;
  for (const auto& s : scored) {
    (s.truth == Liveness::kLiving ? living : spoofing)++;
  }
  if (living == 0 || spoofing == 0) {
    throw ValueError(std::string(op) + ": need at least one sample of each class, got " +
                     std::to_string(living) + " living / " + std::to_string(spoofing) +
                     " spoofing");
  }
}

}  // namespace

ClassificationRates classify(const std::vector<ScoredSample>& scored, double threshold) {
  check_both_classes("classify", scored);
  int living = 0, spoofing = 0, fa = 0, fr = 0;
  for (const auto& s : scored) {
    if (s.truth == Liveness::kSpoofing) {
      ++spoofing;
      if (s.score >= threshold) ++fa;  // attack accepted as live
    } else {
      ++living;
      if (s.score < threshold) ++fr;  // bona fide rejected
    }
  }
  ClassificationRates r;
  r.apcer = static_cast<double>(fa) / spoofing;
  r.bpcer = static_cast<double>(fr) / living;
  r.acer = (r.apcer + r.bpcer) / 2.0;
  return r;
}

double auc(const std::vector<ScoredSample>& scored) {
  check_both_classes("auc", scored);

  // Rank-sum with average ranks for ties.
  std::vector<size_t> order(scored.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scored[a].score < scored[b].score;
  });

  std::vector<double> rank(scored.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() &&
           scored[order[j + 1]].score == scored[order[i]].score) {
      ++j;
    }
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg_rank;
    i = j + 1;
  }

  double living_rank_sum = 0.0;
  int64_t n_living = 0, n_spoof = 0;
  for (size_t k = 0; k < scored.size(); ++k) {
    if (scored[k].truth == Liveness::kLiving) {
      living_rank_sum += rank[k];
      ++n_living;
    } else {
      ++n_spoof;
    }
  }
  const double u = living_rank_sum - static_cast<double>(n_living) *
                                         (static_cast<double>(n_living) + 1.0) / 2.0;
  return u / (static_cast<double>(n_living) * static_cast<double>(n_spoof));
}

std::pair<double, double> aggregate(const std::vector<double>& acers) {
  if (acers.empty()) throw ValueError("aggregate: empty ACER list");
  const double t = static_cast<double>(acers.size());
  double mean = 0.0;
  for (double a : acers) mean += a;
  mean /= t;

  double sigma = 0.0;
  if (acers.size() > 1) {
    double ss = 0.0;
    for (double a : acers) ss += (a - mean) * (a - mean);
    sigma = std::sqrt(ss / (t - 1.0));
  }
  return {mean, 1.96 * sigma / std::sqrt(t)};
}

double select_threshold(const std::vector<ScoredSample>& calibration) {
  check_both_classes("select_threshold", calibration);

  std::vector<double> scores;
  scores.reserve(calibration.size());
  for (const auto& s : calibration) scores.push_back(s.score);
  std::sort(scores.begin(), scores.end());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  std::vector<double> candidates;
  candidates.reserve(scores.size() + 1);
  candidates.push_back(scores.front() - 1.0);
  for (size_t i = 0; i + 1 < scores.size(); ++i) {
    candidates.push_back((scores[i] + scores[i + 1]) / 2.0);
  }
  candidates.push_back(scores.back() + 1.0);

  double best_threshold = candidates.front();
  double best_acer = classify(calibration, best_threshold).acer;
  for (size_t i = 1; i < candidates.size(); ++i) {
    const double acer = classify(calibration, candidates[i]).acer;
    if (acer < best_acer) {
      best_acer = acer;
      best_threshold = candidates[i];
    }
  }
  return best_threshold;
}

EvalReport build_report(const std::vector<TaskMetrics>& per_task) {
  if (per_task.empty()) throw ValueError("build_report: no tasks");
  EvalReport report;
  report.per_task = per_task;
  report.task_count = static_cast<int>(per_task.size());

  std::vector<double> acers;
  acers.reserve(per_task.size());
  double auc_sum = 0.0;
  for (const auto& t : per_task) {
    acers.push_back(t.acer);
    auc_sum += t.auc;
  }
  auto [mean, interval] = aggregate(acers);
  report.acer_mean = mean;
  report.acer_interval = interval;
  report.auc_mean = auc_sum / static_cast<double>(per_task.size());
  return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
  char line[160];
  out << "# eval-report v1\n";
  for (size_t i = 0; i < report.per_task.size(); ++i) {
    const auto& t = report.per_task[i];
    std::snprintf(line, sizeof(line),
                  "task %zu apcer %.9f bpcer %.9f acer %.9f auc %.9f\n", i, t.apcer,
                  t.bpcer, t.acer, t.auc);
    out << line;
  }
  out << "tasks " << report.task_count << "\n";
  std::snprintf(line, sizeof(line), "acer%% %.2f±%.2f\n", report.acer_mean * 100.0,
                report.acer_interval * 100.0);
  out << line;
  std::snprintf(line, sizeof(line), "auc %.4f\n", report.auc_mean);
  out << line;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  write_report(os, report);
  return os.str();
}

}  // namespace metrics
}  // namespace metafas
