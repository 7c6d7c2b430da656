#pragma once

#include <functional>
#include <random>
#include <vector>

#include "metafas/data.hpp"
#include "metafas/metrics.hpp"
#include "metafas/model.hpp"
#include "metafas/taskgen.hpp"

namespace metafas {

/// Learnable geometric inner-update schedule: step j uses size alpha*gamma^j,
/// so the very first step uses alpha itself. Both scalars stay positive
/// (clamped after each outer update). When `trainable` is off the schedule is
/// frozen and excluded from the outer update (fixed-step ablation).
struct StepSchedule {
  double alpha = 1e-3;
  double gamma = 1.0;
  bool trainable = true;

  void validate() const;
};

struct LearnerConfig {
  double beta = 1e-4;  // outer learning rate
  int inner_steps = 3; // u
  int meta_batch = 8;
  bool second_order = true;  // differentiate through the inner steps
  bool adam_outer = false;   // adaptive-moment outer update instead of plain SGD
  int threads = 1;           // workers for per-task gradients; any count gives
                             // identical results (fixed reduction order)

  void validate() const;
};

/// Scalar loss as a function of a weight list; closes over its batch.
using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct InnerUpdateResult {
  std::vector<Tensor> weights;        // adapted weights after the last step
  std::vector<double> step_sizes;     // applied alpha*gamma^j, one per step
  std::vector<double> support_losses; // support loss before each step
};

/// The inner loop over an arbitrary differentiable loss. Starting from
/// `theta`, performs `steps` full-batch gradient steps with size
/// alpha*gamma^j at step j. With create_graph the returned weights stay
/// differentiable with respect to (theta, alpha, gamma). With retain_chain
/// off, each step's trace is dropped immediately (evaluation mode); the
/// result is then plain leaf weights.
InnerUpdateResult inner_update_weights(const std::vector<Tensor>& theta,
                                       const Tensor& alpha, const Tensor& gamma,
                                       const LossFn& support_loss, int steps,
                                       bool create_graph, bool retain_chain);

struct MetaStepResult {
  double summed_query_loss = 0.0;
  std::vector<double> query_losses;  // per task
};

/// Append-only per-iteration training history.
struct TrainRunState {
  int iteration = 0;
  std::vector<double> query_loss_history;  // mean query loss per iteration
  std::vector<double> alpha_history;
  std::vector<double> gamma_history;
};

class MetaLearner {
 public:
  MetaLearner(Network network, Weights theta, StepSchedule schedule,
              LearnerConfig config);

  const Network& network() const { return network_; }
  const Weights& weights() const { return theta_; }
  const StepSchedule& schedule() const { return schedule_; }
  const LearnerConfig& config() const { return config_; }
  const TrainRunState& state() const { return state_; }

  /// Adapted weights for one support set; the learner's own weights are
  /// untouched. In training mode the adaptation stays differentiable per the
  /// learner's second_order setting.
  InnerUpdateResult inner_update(const std::vector<Sample>& support, int steps,
                                 bool for_training) const;

  /// One outer iteration over a batch of meta_batch tasks: adapt on each
  /// support set, sum the query losses, and take one step of size beta on
  /// (theta, alpha, gamma) jointly. Gradients are computed per task and
  /// reduced in task order, so results do not depend on the thread count.
  MetaStepResult meta_train_step(const std::vector<Task>& tasks);

  /// Conventional supervised minimization of the task loss over every
  /// sample in the pool (mini-batch SGD). Returns the mean loss per epoch.
  std::vector<double> pretrain(const FineGrainedPool& pool, int epochs,
                               int batch_size, double learning_rate,
                               std::mt19937_64& rng);

  /// Per task: adapt on the support (theta restored afterwards), score the
  /// query with the liveness score, compute APCER/BPCER/ACER/AUC at a
  /// support-calibrated threshold, and aggregate across tasks.
  metrics::EvalReport meta_test(const std::vector<Task>& tasks, int steps) const;

  Checkpoint make_checkpoint(uint64_t seed) const;
  static MetaLearner from_checkpoint(const Checkpoint& ck, LearnerConfig config);

 private:
  Weights with_tensors(std::vector<Tensor> tensors) const;
  void apply_outer_update(const std::vector<Tensor>& grads, size_t theta_count,
                          bool schedule_in_update);

  Network network_;
  Weights theta_;  // canonical values, no gradient flags
  StepSchedule schedule_;
  LearnerConfig config_;
  TrainRunState state_;

  // Adaptive-moment state (lazily sized), used only when adam_outer is set.
  std::vector<std::vector<double>> adam_m_, adam_v_;
  std::vector<double> adam_m_sched_, adam_v_sched_;
  int adam_t_ = 0;
};

/// Table-style baseline protocol: the conventionally trained model is
/// evaluated directly on the query for zero-shot tasks, and fine-tuned on
/// the support with a fixed learning rate first for K>0; weights are
/// restored between tasks. Threshold policy matches meta_test.
metrics::EvalReport baseline_finetune_eval(const Network& network, const Weights& theta,
                                           const std::vector<Task>& tasks,
                                           int finetune_steps, double finetune_lr,
                                           int threads = 1);

}  // namespace metafas
