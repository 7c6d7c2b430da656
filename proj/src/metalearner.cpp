#include "metafas/metalearner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "metafas/autodiff.hpp"
#include "metafas/ops.hpp"

namespace metafas {

namespace {

constexpr double kMinScheduleValue = 1e-8;

// Runs fn(0..n-1) across `threads` workers; slot-indexed outputs keep the
// result independent of scheduling. Exceptions are rethrown on the caller.
template <class F>
void parallel_for(int n, int threads, F&& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<metrics::ScoredSample> score_samples(const Network& network,
                                                 const Weights& weights,
                                                 const std::vector<Sample>& samples) {
  Batch batch = make_batch(samples);
  std::vector<double> scores = network.live_scores(weights, batch.images);
  std::vector<metrics::ScoredSample> out(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    out[i] = {scores[i], samples[i].label.liveness};
  }
  return out;
}

metrics::TaskMetrics evaluate_adapted(const Network& network, const Weights& adapted,
                                      const Task& task) {
  auto support_scored = score_samples(network, adapted, task.support);
  const double threshold = metrics::select_threshold(support_scored);
  auto query_scored = score_samples(network, adapted, task.query);
  auto rates = metrics::classify(query_scored, threshold);
  metrics::TaskMetrics m;
  m.apcer = rates.apcer;
  m.bpcer = rates.bpcer;
  m.acer = rates.acer;
  m.auc = metrics::auc(query_scored);
  return m;
}

}  // namespace

void StepSchedule::validate() const {
  if (alpha <= 0.0 || gamma <= 0.0) {
    throw ValueError("step schedule: alpha and gamma must be positive, got alpha=" +
                     std::to_string(alpha) + " gamma=" + std::to_string(gamma));
  }
}

void LearnerConfig::validate() const {
  std::vector<std::string> problems;
  if (beta <= 0.0) problems.push_back("beta must be positive");
  if (inner_steps < 1) problems.push_back("inner_steps (u) must be >= 1 for training");
  if (meta_batch < 1) problems.push_back("meta_batch must be >= 1");
  if (threads < 1) problems.push_back("threads must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid learner config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValueError(msg);
  }
}

InnerUpdateResult inner_update_weights(const std::vector<Tensor>& theta,
                                       const Tensor& alpha, const Tensor& gamma,
                                       const LossFn& support_loss, int steps,
                                       bool create_graph, bool retain_chain) {
  if (steps < 0) throw ValueError("inner_update: negative step count");

  InnerUpdateResult result;
  result.weights = theta;
  result.step_sizes.reserve(static_cast<size_t>(steps));
  result.support_losses.reserve(static_cast<size_t>(steps));

  Tensor gamma_power;  // gamma^j, built by repeated multiplication
  for (int j = 0; j < steps; ++j) {
    Tensor loss = support_loss(result.weights);
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("inner_update: support loss became non-finite at step " +
                            std::to_string(j), j);
    }
    result.support_losses.push_back(loss_value);

    std::vector<Tensor> grads =
        grad(loss, result.weights, {.create_graph = create_graph});

    Tensor step = j == 0 ? alpha : mul(alpha, gamma_power);
    gamma_power = j == 0 ? gamma : mul(gamma_power, gamma);
    result.step_sizes.push_back(step.item());

    std::vector<Tensor> next(result.weights.size());
    if (retain_chain) {
      for (size_t i = 0; i < next.size(); ++i) {
        next[i] = sub(result.weights[i], scalar_mul(step, grads[i]));
      }
    } else {
      // Evaluation mode: compute plain values and re-leaf them so each
      // step's trace is released immediately.
      NoGradGuard guard;
      for (size_t i = 0; i < next.size(); ++i) {
        next[i] = sub(result.weights[i], scalar_mul(step, grads[i]));
        next[i].set_requires_grad(true);
      }
    }
    result.weights = std::move(next);
  }
  return result;
}

MetaLearner::MetaLearner(Network network, Weights theta, StepSchedule schedule,
                         LearnerConfig config)
    : network_(std::move(network)),
      theta_(theta.detached_copy(false)),
      schedule_(schedule),
      config_(config) {
  schedule_.validate();
  config_.validate();
}

Weights MetaLearner::with_tensors(std::vector<Tensor> tensors) const {
  Weights w;
  w.names = theta_.names;
  w.tensors = std::move(tensors);
  return w;
}

InnerUpdateResult MetaLearner::inner_update(const std::vector<Sample>& support,
                                            int steps, bool for_training) const {
  if (support.empty()) throw ValueError("inner_update: empty support set");
  Batch batch = make_batch(support);
  LossFn loss = [this, &batch](const std::vector<Tensor>& w) {
    return network_.task_loss(with_tensors(w), batch);
  };
  Weights w = theta_.detached_copy(true);
  Tensor alpha = Tensor::scalar(schedule_.alpha);
  Tensor gamma = Tensor::scalar(schedule_.gamma);
  if (for_training && schedule_.trainable) {
    alpha.set_requires_grad(true);
    gamma.set_requires_grad(true);
  }
  return inner_update_weights(w.tensors, alpha, gamma, loss, steps,
                              for_training && config_.second_order, for_training);
}

MetaStepResult MetaLearner::meta_train_step(const std::vector<Task>& tasks) {
  if (static_cast<int>(tasks.size()) != config_.meta_batch) {
    throw ValueError("meta_train_step: got " + std::to_string(tasks.size()) +
                     " tasks, meta_batch is " + std::to_string(config_.meta_batch));
  }
  for (const auto& t : tasks) {
    if (t.support.empty() || t.query.empty()) {
      throw ValueError("meta_train_step: task with empty support or query set");
    }
  }

  Weights base = theta_.detached_copy(true);
  Tensor alpha = Tensor::scalar(schedule_.alpha);
  Tensor gamma = Tensor::scalar(schedule_.gamma);
  if (schedule_.trainable) {
    alpha.set_requires_grad(true);
    gamma.set_requires_grad(true);
  }

  std::vector<Tensor> wrt = base.tensors;
  const size_t theta_count = wrt.size();
  if (schedule_.trainable) {
    wrt.push_back(alpha);
    wrt.push_back(gamma);
  }

  // Per-task gradients of the query loss at the adapted weights; computed
  // independently (Eq. sum commutes with the gradient) and reduced in task
  // order below.
  std::vector<std::vector<Tensor>> task_grads(tasks.size());
  std::vector<double> query_losses(tasks.size());

  parallel_for(static_cast<int>(tasks.size()), config_.threads, [&](int i) {
    const Task& task = tasks[static_cast<size_t>(i)];
    Batch support = make_batch(task.support);
    Batch query = make_batch(task.query);
    LossFn support_loss = [this, &support](const std::vector<Tensor>& w) {
      return network_.task_loss(with_tensors(w), support);
    };
    InnerUpdateResult inner =
        inner_update_weights(base.tensors, alpha, gamma, support_loss,
                             config_.inner_steps, config_.second_order, true);
    Tensor query_loss = network_.task_loss(with_tensors(inner.weights), query);
    const double value = query_loss.item();
    if (!std::isfinite(value)) {
      throw DivergenceError("meta_train_step: query loss became non-finite", -1);
    }
    query_losses[static_cast<size_t>(i)] = value;
    // gamma is legitimately absent from the trace when u=1 (gamma^0 only),
    // so unreached targets resolve to exact zeros here.
    task_grads[static_cast<size_t>(i)] =
        grad(query_loss, wrt, {.zero_for_unreachable = true});
  });

  std::vector<Tensor> total = std::move(task_grads[0]);
  for (size_t i = 1; i < task_grads.size(); ++i) {
    for (size_t k = 0; k < total.size(); ++k) {
      total[k] = add(total[k], task_grads[i][k]);
    }
  }

  apply_outer_update(total, theta_count, schedule_.trainable);

  MetaStepResult result;
  result.query_losses = std::move(query_losses);
  for (double q : result.query_losses) result.summed_query_loss += q;

  state_.iteration += 1;
  state_.query_loss_history.push_back(result.summed_query_loss /
                                      static_cast<double>(tasks.size()));
  state_.alpha_history.push_back(schedule_.alpha);
  state_.gamma_history.push_back(schedule_.gamma);
  return result;
}

void MetaLearner::apply_outer_update(const std::vector<Tensor>& grads,
                                     size_t theta_count, bool schedule_in_update) {
  const double beta = config_.beta;

  auto sgd_new_value = [&](double value, double g) { return value - beta * g; };

  if (!config_.adam_outer) {
    std::vector<Tensor> new_theta;
    new_theta.reserve(theta_count);
    for (size_t k = 0; k < theta_count; ++k) {
      const auto& g = grads[k].values();
      std::vector<double> v = theta_.tensors[k].values();
      for (size_t i = 0; i < v.size(); ++i) v[i] = sgd_new_value(v[i], g[i]);
      new_theta.push_back(Tensor::from_values(theta_.tensors[k].shape(), std::move(v)));
    }
    theta_.tensors = std::move(new_theta);
    if (schedule_in_update) {
      schedule_.alpha = std::max(kMinScheduleValue,
                                 sgd_new_value(schedule_.alpha, grads[theta_count].item()));
      schedule_.gamma = std::max(
          kMinScheduleValue, sgd_new_value(schedule_.gamma, grads[theta_count + 1].item()));
    }
    return;
  }

  // Adaptive-moment variant (optional flag; plain SGD is the default).
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (adam_m_.empty()) {
    adam_m_.resize(theta_count);
    adam_v_.resize(theta_count);
    for (size_t k = 0; k < theta_count; ++k) {
      adam_m_[k].assign(theta_.tensors[k].values().size(), 0.0);
      adam_v_[k].assign(theta_.tensors[k].values().size(), 0.0);
    }
    adam_m_sched_.assign(2, 0.0);
    adam_v_sched_.assign(2, 0.0);
  }
  adam_t_ += 1;
  const double corr1 = 1.0 - std::pow(b1, adam_t_);
  const double corr2 = 1.0 - std::pow(b2, adam_t_);
  auto adam_new_value = [&](double value, double g, double& m, double& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    return value - beta * (m / corr1) / (std::sqrt(v / corr2) + eps);
  };

  std::vector<Tensor> new_theta;
  new_theta.reserve(theta_count);
  for (size_t k = 0; k < theta_count; ++k) {
    const auto& g = grads[k].values();
    std::vector<double> v = theta_.tensors[k].values();
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = adam_new_value(v[i], g[i], adam_m_[k][i], adam_v_[k][i]);
    }
    new_theta.push_back(Tensor::from_values(theta_.tensors[k].shape(), std::move(v)));
  }
  theta_.tensors = std::move(new_theta);
  if (schedule_in_update) {
    schedule_.alpha = std::max(
        kMinScheduleValue, adam_new_value(schedule_.alpha, grads[theta_count].item(),
                                          adam_m_sched_[0], adam_v_sched_[0]));
    schedule_.gamma = std::max(
        kMinScheduleValue, adam_new_value(schedule_.gamma, grads[theta_count + 1].item(),
                                          adam_m_sched_[1], adam_v_sched_[1]));
  }
}

std::vector<double> MetaLearner::pretrain(const FineGrainedPool& pool, int epochs,
                                          int batch_size, double learning_rate,
                                          std::mt19937_64& rng) {
  if (epochs < 0) throw ValueError("pretrain: negative epoch count");
  if (batch_size < 1) throw ValueError("pretrain: batch_size must be >= 1");
  auto samples = pool.all_samples();
  if (samples.empty()) throw ValueError("pretrain: empty pool");

  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<size_t>(epochs));
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
      std::vector<Sample> chunk;
      chunk.reserve(end - at);
      for (size_t i = at; i < end; ++i) chunk.push_back(*samples[order[i]]);
      Batch batch = make_batch(chunk);

      Weights w = theta_.detached_copy(true);
      Tensor loss = network_.task_loss(w, batch);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("pretrain: loss became non-finite", -1);
      }
      loss_sum += value;
      ++batches;

      auto grads = grad(loss, w.tensors);
      std::vector<Tensor> new_theta;
      new_theta.reserve(theta_.tensors.size());
      for (size_t k = 0; k < theta_.tensors.size(); ++k) {
        std::vector<double> v = theta_.tensors[k].values();
        const auto& g = grads[k].values();
        for (size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * g[i];
        new_theta.push_back(Tensor::from_values(theta_.tensors[k].shape(), std::move(v)));
      }
      theta_.tensors = std::move(new_theta);
    }
    epoch_losses.push_back(loss_sum / std::max(1, batches));
  }
  return epoch_losses;
}

metrics::EvalReport MetaLearner::meta_test(const std::vector<Task>& tasks,
                                           int steps) const {
  if (tasks.empty()) throw ValueError("meta_test: empty task list");
  std::vector<metrics::TaskMetrics> per_task(tasks.size());

  parallel_for(static_cast<int>(tasks.size()), config_.threads, [&](int i) {
    const Task& task = tasks[static_cast<size_t>(i)];
    InnerUpdateResult inner = inner_update(task.support, steps, /*for_training=*/false);
    per_task[static_cast<size_t>(i)] =
        evaluate_adapted(network_, with_tensors(inner.weights), task);
  });

  return metrics::build_report(per_task);
}

Checkpoint MetaLearner::make_checkpoint(uint64_t seed) const {
  Checkpoint ck;
  ck.config = network_.config();
  ck.seed = seed;
  ck.weights = theta_.detached_copy(false);
  ck.alpha = schedule_.alpha;
  ck.gamma = schedule_.gamma;
  ck.inner_steps = config_.inner_steps;
  ck.beta = config_.beta;
  return ck;
}

MetaLearner MetaLearner::from_checkpoint(const Checkpoint& ck, LearnerConfig config) {
  StepSchedule schedule;
  schedule.alpha = ck.alpha;
  schedule.gamma = ck.gamma;
  return MetaLearner(Network(ck.config), ck.weights, schedule, config);
}

metrics::EvalReport baseline_finetune_eval(const Network& network, const Weights& theta,
                                           const std::vector<Task>& tasks,
                                           int finetune_steps, double finetune_lr,
                                           int threads) {
  if (tasks.empty()) throw ValueError("baseline_finetune_eval: empty task list");
  if (finetune_steps < 0) throw ValueError("baseline_finetune_eval: negative step count");

  std::vector<metrics::TaskMetrics> per_task(tasks.size());
  parallel_for(static_cast<int>(tasks.size()), threads, [&](int i) {
    const Task& task = tasks[static_cast<size_t>(i)];
    Weights adapted = theta.detached_copy(false);
    if (task.shots > 0 && finetune_steps > 0) {
      // Fixed-rate fine-tuning on the support set; zero-shot tasks skip it.
      Batch support = make_batch(task.support);
      Weights w = theta.detached_copy(true);
      for (int s = 0; s < finetune_steps; ++s) {
        Tensor loss = network.task_loss(w, support);
        if (!std::isfinite(loss.item())) {
          throw DivergenceError("baseline fine-tune: loss became non-finite", s);
        }
        auto grads = grad(loss, w.tensors);
        NoGradGuard guard;
        for (size_t k = 0; k < w.tensors.size(); ++k) {
          w.tensors[k] = sub(w.tensors[k], scale(grads[k], finetune_lr));
          w.tensors[k].set_requires_grad(true);
        }
      }
      adapted = w.detached_copy(false);
    }
    per_task[static_cast<size_t>(i)] = evaluate_adapted(network, adapted, task);
  });

  return metrics::build_report(per_task);
}

}  // namespace metafas
