#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "metafas/metalearner.hpp"
#include "metafas/metrics.hpp"
#include "metafas/model.hpp"
#include "metafas/taskgen.hpp"

namespace metafas {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | manifest
  SyntheticSpec synthetic;
  std::string manifest_path;
};

struct TrainConfig {
  std::string mode = "meta";  // meta | baseline (conventional supervised only)
  int iterations = 2000;      // outer iterations (meta mode)
  int pretrain_epochs = 5;    // supervised warm-up; also the budget in baseline mode
  int pretrain_batch = 32;
  double pretrain_lr = 0.001;
  int checkpoint_every = 0;  // 0 = final checkpoint only
};

struct EvalConfig {
  std::string mode = "meta";  // meta | baseline (fine-tune-then-evaluate protocol)
  int shots = 0;              // K
  int tasks = 100;            // T
  int inner_steps = -1;       // -1 = use the checkpoint's value
  int finetune_steps = 10;    // baseline protocol only
  double finetune_lr = 0.001;
};

/// Everything a run needs; a run is fully determined by (RunConfig, seed).
struct RunConfig {
  uint64_t seed = 1;
  std::string out_dir = "out";
  DataConfig data;
  ModelConfig model;
  EpisodeConfig episode;
  StepSchedule schedule;
  LearnerConfig learner;
  TrainConfig train;
  EvalConfig eval;

  /// Throws ValueError listing every violated constraint across sections.
  void validate() const;
};

RunConfig run_config_from_json_file(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_to_json(const RunConfig& config);

/// Deterministic stream derivation: one master seed, many independent
/// engines (task index, pretraining shuffle, init, ...).
uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index);

struct PoolSet {
  FineGrainedPool train, val, test;
};

/// Generates or loads the pools named by the data config.
PoolSet load_pools(const DataConfig& data, const ModelConfig& model);

/// Testing tasks: predefined categories from the train pool, novel
/// categories from the test pool, one derived rng stream per task index.
std::vector<Task> make_eval_tasks(const PoolSet& pools, int shots, int count,
                                  const EpisodeConfig& episode, uint64_t seed);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string log_path;
  double final_mean_query_loss = 0.0;
};

/// Full training pipeline per the run config: pretraining followed by
/// fusion meta-training (or supervised training only in baseline mode).
/// Writes a line-oriented log and a final checkpoint under out_dir. On
/// divergence, dumps the run state to out_dir/divergence_dump.json and
/// rethrows.
TrainOutputs run_train(const RunConfig& config);

/// Generates eval tasks and evaluates a checkpoint per the eval config;
/// writes out_dir/eval_report.txt and returns the report.
metrics::EvalReport run_eval(const RunConfig& config, const std::string& checkpoint_path);

/// Materializes the synthetic benchmark and manifest; returns manifest path.
std::string run_synth(const SyntheticSpec& spec, const std::string& out_dir);

struct GradcheckConfig {
  int inner_steps = 3;
  bool first_order = false;
  uint64_t seed = 5;
};

/// Finite-difference verification harness: primitive gradients, a
/// second-order probe, and the meta-gradient of a tiny model through the
/// full inner loop. Prints one line per check; returns 0 when all pass.
int run_gradcheck(const GradcheckConfig& config, std::ostream& out);

/// Meta-gradient finite-difference check on a tiny perceptron (<=100
/// parameters): inner-adapt on a fixed support batch, compare grad() of the
/// query loss against central differences for theta, alpha and gamma.
struct MetaGradCheck {
  bool theta_ok = false;
  bool alpha_ok = false;
  bool gamma_ok = false;
  double theta_worst = 0.0;  // worst |analytic-numeric|/allowance ratio
  double alpha_worst = 0.0;
  double gamma_worst = 0.0;
  double gamma_grad = 0.0;   // raw computed gamma gradient
  int parameter_count = 0;
};

MetaGradCheck meta_gradient_check(int inner_steps, bool second_order, uint64_t seed,
                                  double rel_tol = 1e-3, double abs_floor = 1e-6);

}  // namespace metafas
