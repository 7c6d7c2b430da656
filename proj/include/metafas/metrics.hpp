#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "metafas/data.hpp"

namespace metafas {
namespace metrics {

struct ScoredSample {
  double score = 0.0;       // higher = more living
  Liveness truth = Liveness::kSpoofing;
};

struct ClassificationRates {
  double apcer = 0.0;  // attacks accepted as live
  double bpcer = 0.0;  // bona fide rejected
  double acer = 0.0;   // (apcer + bpcer) / 2
};

struct TaskMetrics {
  double apcer = 0.0;
  double bpcer = 0.0;
  double acer = 0.0;
  double auc = 0.0;
};

struct EvalReport {
  std::vector<TaskMetrics> per_task;
  double acer_mean = 0.0;
  double acer_interval = 0.0;  // 1.96 * sigma / sqrt(T), sample sigma
  double auc_mean = 0.0;
  int task_count = 0;
};

/// APCER/BPCER/ACER at a fixed threshold: a sample is called living when its
/// score >= threshold. Requires at least one sample of each class.
ClassificationRates classify(const std::vector<ScoredSample>& scored, double threshold);

/// Probability that a random living sample outscores a random spoofing
/// sample, ties credited 1/2 (rank-sum formulation). Requires both classes.
double auc(const std::vector<ScoredSample>& scored);

/// Mean and 1.96*sigma/sqrt(T) half-interval of per-task ACERs, with sigma
/// the sample (T-1) standard deviation; sigma is defined 0 for T=1.
std::pair<double, double> aggregate(const std::vector<double>& acers);

/// Threshold minimizing ACER on a calibration set, taken at the midpoint of
/// the optimal decision boundary between adjacent scores. Deterministic:
/// among ties, the lowest candidate wins.
double select_threshold(const std::vector<ScoredSample>& calibration);

EvalReport build_report(const std::vector<TaskMetrics>& per_task);

/// Line-oriented report: one row per task plus aggregate rows, ACER
/// presented percent-style as "mean±interval".
void write_report(std::ostream& out, const EvalReport& report);
std::string format_report(const EvalReport& report);

}  // namespace metrics
}  // namespace metafas
