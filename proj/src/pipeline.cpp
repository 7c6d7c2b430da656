#include "metafas/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "metafas/autodiff.hpp"
#include "metafas/ops.hpp"

namespace fs = std::filesystem;

namespace metafas {

namespace {

using nlohmann::json;

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void collect(std::vector<std::string>& problems, const std::function<void()>& check) {
  try {
    check();
  } catch (const ValueError& e) {
    problems.push_back(e.what());
  }
}

}  // namespace

uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  uint64_t x = splitmix64(seed ^ splitmix64(stream));
  return splitmix64(x ^ splitmix64(index));
}

void RunConfig::validate() const {
  std::vector<std::string> problems;
  collect(problems, [&] { model.validate(); });
  collect(problems, [&] { episode.validate(); });
  collect(problems, [&] { schedule.validate(); });
  collect(problems, [&] { learner.validate(); });

  if (data.source != "synthetic" && data.source != "manifest") {
    problems.push_back("data.source must be synthetic|manifest, got '" + data.source + "'");
  }
  if (data.source == "synthetic") {
    collect(problems, [&] { data.synthetic.validate(); });
  } else if (data.manifest_path.empty()) {
    problems.push_back("data.manifest_path required for manifest source");
  }
  if (train.mode != "meta" && train.mode != "baseline") {
    problems.push_back("train.mode must be meta|baseline, got '" + train.mode + "'");
  }
  if (train.iterations < 0) problems.push_back("train.iterations must be >= 0");
  if (train.pretrain_epochs < 0) problems.push_back("train.pretrain_epochs must be >= 0");
  if (train.pretrain_batch < 1) problems.push_back("train.pretrain_batch must be >= 1");
  if (train.pretrain_lr <= 0) problems.push_back("train.pretrain_lr must be positive");
  if (train.checkpoint_every < 0) problems.push_back("train.checkpoint_every must be >= 0");
  if (eval.mode != "meta" && eval.mode != "baseline") {
    problems.push_back("eval.mode must be meta|baseline, got '" + eval.mode + "'");
  }
  if (eval.shots < 0) problems.push_back("eval.shots must be >= 0");
  if (eval.shots > episode.predefined_per_class) {
    problems.push_back("eval.shots exceeds episode.predefined_per_class");
  }
  if (eval.tasks < 1) problems.push_back("eval.tasks must be >= 1");
  if (eval.finetune_steps < 0) problems.push_back("eval.finetune_steps must be >= 0");
  if (eval.finetune_lr <= 0) problems.push_back("eval.finetune_lr must be positive");
  if (out_dir.empty()) problems.push_back("out_dir must be set");

  if (!problems.empty()) {
    std::string msg = "invalid run config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ValueError(msg);
  }
}

namespace {

HeadKind head_from_string(const std::string& s) {
  if (s == "depth") return HeadKind::kDepthRegression;
  if (s == "binary") return HeadKind::kBinaryClassification;
  throw ValueError("model.head must be depth|binary, got '" + s + "'");
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config: parse failure: ") + e.what());
  }

  RunConfig c;
  try {
    maybe(j, "seed", c.seed);
    maybe(j, "out_dir", c.out_dir);
    if (j.contains("data")) {
      const json& d = j.at("data");
      maybe(d, "source", c.data.source);
      maybe(d, "manifest_path", c.data.manifest_path);
      if (d.contains("synthetic")) {
        const json& s = d.at("synthetic");
        maybe(s, "living_categories", c.data.synthetic.living_categories);
        maybe(s, "spoofing_categories", c.data.synthetic.spoofing_categories);
        maybe(s, "samples_per_category", c.data.synthetic.samples_per_category);
        maybe(s, "image_side", c.data.synthetic.image_side);
        maybe(s, "depth_side", c.data.synthetic.depth_side);
        maybe(s, "seed", c.data.synthetic.seed);
      }
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      maybe(m, "input_side", c.model.input_side);
      maybe(m, "depth_side", c.model.depth_side);
      maybe(m, "input_channels", c.model.input_channels);
      maybe(m, "stem_channels", c.model.stem_channels);
      maybe(m, "channels", c.model.channels);
      maybe(m, "head_channels", c.model.head_channels);
      maybe(m, "lambda_contrast", c.model.lambda_contrast);
      if (m.contains("head")) c.model.head = head_from_string(m.at("head").get<std::string>());
    }
    if (j.contains("episode")) {
      const json& e = j.at("episode");
      maybe(e, "predefined_per_class", c.episode.predefined_per_class);
      maybe(e, "query_per_class", c.episode.query_per_class);
      maybe(e, "shot_menu", c.episode.shot_menu);
      maybe(e, "support_novel_only", c.episode.support_novel_only);
    }
    if (j.contains("schedule")) {
      const json& s = j.at("schedule");
      maybe(s, "alpha", c.schedule.alpha);
      maybe(s, "gamma", c.schedule.gamma);
      maybe(s, "trainable", c.schedule.trainable);
    }
    if (j.contains("learner")) {
      const json& l = j.at("learner");
      maybe(l, "beta", c.learner.beta);
      maybe(l, "inner_steps", c.learner.inner_steps);
      maybe(l, "meta_batch", c.learner.meta_batch);
      maybe(l, "second_order", c.learner.second_order);
      maybe(l, "adam_outer", c.learner.adam_outer);
      maybe(l, "threads", c.learner.threads);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      maybe(t, "mode", c.train.mode);
      maybe(t, "iterations", c.train.iterations);
      maybe(t, "pretrain_epochs", c.train.pretrain_epochs);
      maybe(t, "pretrain_batch", c.train.pretrain_batch);
      maybe(t, "pretrain_lr", c.train.pretrain_lr);
      maybe(t, "checkpoint_every", c.train.checkpoint_every);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      maybe(e, "mode", c.eval.mode);
      maybe(e, "shots", c.eval.shots);
      maybe(e, "tasks", c.eval.tasks);
      maybe(e, "inner_steps", c.eval.inner_steps);
      maybe(e, "finetune_steps", c.eval.finetune_steps);
      maybe(e, "finetune_lr", c.eval.finetune_lr);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("config: malformed value: ") + e.what());
  }
  return c;
}

RunConfig run_config_from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json_text(buf.str());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["data"] = {{"source", c.data.source},
               {"manifest_path", c.data.manifest_path},
               {"synthetic",
                {{"living_categories", c.data.synthetic.living_categories},
                 {"spoofing_categories", c.data.synthetic.spoofing_categories},
                 {"samples_per_category", c.data.synthetic.samples_per_category},
                 {"image_side", c.data.synthetic.image_side},
                 {"depth_side", c.data.synthetic.depth_side},
                 {"seed", c.data.synthetic.seed}}}};
  j["model"] = {{"input_side", c.model.input_side},
                {"depth_side", c.model.depth_side},
                {"input_channels", c.model.input_channels},
                {"stem_channels", c.model.stem_channels},
                {"channels", c.model.channels},
                {"head_channels", c.model.head_channels},
                {"head", c.model.head == HeadKind::kDepthRegression ? "depth" : "binary"},
                {"lambda_contrast", c.model.lambda_contrast}};
  j["episode"] = {{"predefined_per_class", c.episode.predefined_per_class},
                  {"query_per_class", c.episode.query_per_class},
                  {"shot_menu", c.episode.shot_menu},
                  {"support_novel_only", c.episode.support_novel_only}};
  j["schedule"] = {{"alpha", c.schedule.alpha},
                   {"gamma", c.schedule.gamma},
                   {"trainable", c.schedule.trainable}};
  j["learner"] = {{"beta", c.learner.beta},
                  {"inner_steps", c.learner.inner_steps},
                  {"meta_batch", c.learner.meta_batch},
                  {"second_order", c.learner.second_order},
                  {"adam_outer", c.learner.adam_outer},
                  {"threads", c.learner.threads}};
  j["train"] = {{"mode", c.train.mode},
                {"iterations", c.train.iterations},
                {"pretrain_epochs", c.train.pretrain_epochs},
                {"pretrain_batch", c.train.pretrain_batch},
                {"pretrain_lr", c.train.pretrain_lr},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["eval"] = {{"mode", c.eval.mode},
               {"shots", c.eval.shots},
               {"tasks", c.eval.tasks},
               {"inner_steps", c.eval.inner_steps},
               {"finetune_steps", c.eval.finetune_steps},
               {"finetune_lr", c.eval.finetune_lr}};
  return j.dump(2);
}

PoolSet load_pools(const DataConfig& data, const ModelConfig& model) {
  PoolSet pools;
  if (data.source == "synthetic") {
    SyntheticBenchmark bench = generate_synthetic_benchmark(data.synthetic);
    pools.train = std::move(bench.train);
    pools.val = std::move(bench.val);
    pools.test = std::move(bench.test);
    if (data.synthetic.image_side != model.input_side ||
        data.synthetic.depth_side != model.depth_side) {
      throw ValueError("synthetic benchmark geometry (" +
                       std::to_string(data.synthetic.image_side) + "/" +
                       std::to_string(data.synthetic.depth_side) +
                       ") does not match model (" + std::to_string(model.input_side) +
                       "/" + std::to_string(model.depth_side) + ")");
    }
    return pools;
  }
  ManifestLoadOptions options;
  options.input_side = model.input_side;
  options.depth_side = model.depth_side;
  pools.train = load_manifest(data.manifest_path, Split::kTrain, options);
  pools.val = load_manifest(data.manifest_path, Split::kVal, options);
  pools.test = load_manifest(data.manifest_path, Split::kTest, options);
  return pools;
}

std::vector<Task> make_eval_tasks(const PoolSet& pools, int shots, int count,
                                  const EpisodeConfig& episode, uint64_t seed) {
  std::vector<Task> tasks;
  tasks.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) {
    std::mt19937_64 rng(derive_seed(seed, /*stream=*/2, static_cast<uint64_t>(t)));
    tasks.push_back(generate_task(pools.train, pools.test, shots, episode, rng));
  }
  return tasks;
}

namespace {

void dump_divergence(const RunConfig& config, const TrainRunState& state,
                     const StepSchedule& schedule, const std::string& reason) {
  json j;
  j["reason"] = reason;
  j["iteration"] = state.iteration;
  j["alpha"] = schedule.alpha;
  j["gamma"] = schedule.gamma;
  const size_t tail = std::min<size_t>(state.query_loss_history.size(), 20);
  j["query_loss_tail"] = std::vector<double>(
      state.query_loss_history.end() - static_cast<long>(tail),
      state.query_loss_history.end());
  std::ofstream out(fs::path(config.out_dir) / "divergence_dump.json");
  out << j.dump(2);
}

char line_buffer[256];

}  // namespace

TrainOutputs run_train(const RunConfig& config) {
  config.validate();
  fs::create_directories(config.out_dir);

  PoolSet pools = load_pools(config.data, config.model);

  Network network(config.model);
  const uint64_t init_seed = derive_seed(config.seed, 0, 0);
  Weights theta = network.init_weights(init_seed);
  MetaLearner learner(network, std::move(theta), config.schedule, config.learner);

  const fs::path log_path = fs::path(config.out_dir) / "train_log.txt";
  std::ofstream log(log_path);
  if (!log) throw DataError("train: cannot write '" + log_path.string() + "'");

  TrainOutputs outputs;
  outputs.log_path = log_path.string();
  const fs::path ck_path = fs::path(config.out_dir) / "checkpoint.json";
  outputs.checkpoint_path = ck_path.string();

  try {
    // Supervised warm-up; in baseline mode this is the whole training run.
    std::mt19937_64 pretrain_rng(derive_seed(config.seed, 1, 0));
    auto epoch_losses =
        learner.pretrain(pools.train, config.train.pretrain_epochs,
                         config.train.pretrain_batch, config.train.pretrain_lr,
                         pretrain_rng);
    for (size_t e = 0; e < epoch_losses.size(); ++e) {
      std::snprintf(line_buffer, sizeof(line_buffer), "pretrain epoch %zu loss %.12g\n",
                    e + 1, epoch_losses[e]);
      log << line_buffer;
    }
    log.flush();

    if (config.train.mode == "meta") {
      const int mb = config.learner.meta_batch;
      for (int iter = 1; iter <= config.train.iterations; ++iter) {
        std::vector<Task> tasks;
        tasks.reserve(static_cast<size_t>(mb));
        for (int slot = 0; slot < mb; ++slot) {
          const uint64_t task_index =
              static_cast<uint64_t>(iter - 1) * static_cast<uint64_t>(mb) +
              static_cast<uint64_t>(slot);
          std::mt19937_64 rng(derive_seed(config.seed, 3, task_index));
          const int shots = sample_shot_count(config.episode, rng);
          tasks.push_back(generate_task(pools.train, pools.train, shots, config.episode, rng));
        }
        learner.meta_train_step(tasks);

        const TrainRunState& state = learner.state();
        std::snprintf(line_buffer, sizeof(line_buffer),
                      "iter %d query_loss %.12g alpha %.12g gamma %.12g\n", iter,
                      state.query_loss_history.back(), state.alpha_history.back(),
                      state.gamma_history.back());
        log << line_buffer;
        log.flush();

        if (config.train.checkpoint_every > 0 && iter % config.train.checkpoint_every == 0) {
          std::snprintf(line_buffer, sizeof(line_buffer), "checkpoint_%06d.json", iter);
          save_checkpoint((fs::path(config.out_dir) / line_buffer).string(),
                          learner.make_checkpoint(config.seed));
        }
      }
      if (!learner.state().query_loss_history.empty()) {
        outputs.final_mean_query_loss = learner.state().query_loss_history.back();
      }
    }
  } catch (const DivergenceError& e) {
    dump_divergence(config, learner.state(), learner.schedule(), e.what());
    throw;
  }

  save_checkpoint(outputs.checkpoint_path, learner.make_checkpoint(config.seed));
  return outputs;
}

metrics::EvalReport run_eval(const RunConfig& config, const std::string& checkpoint_path) {
  config.validate();
  fs::create_directories(config.out_dir);

  Checkpoint ck = load_checkpoint(checkpoint_path);
  PoolSet pools = load_pools(config.data, ck.config);

  std::vector<Task> tasks = make_eval_tasks(pools, config.eval.shots, config.eval.tasks,
                                            config.episode, config.seed);

  metrics::EvalReport report;
  if (config.eval.mode == "baseline") {
    Network network(ck.config);
    report = baseline_finetune_eval(network, ck.weights, tasks,
                                    config.eval.finetune_steps, config.eval.finetune_lr,
                                    config.learner.threads);
  } else {
    LearnerConfig lc = config.learner;
    lc.inner_steps = ck.inner_steps;
    MetaLearner learner = MetaLearner::from_checkpoint(ck, lc);
    const int steps = config.eval.inner_steps >= 0 ? config.eval.inner_steps : ck.inner_steps;
    report = learner.meta_test(tasks, steps);
  }

  const fs::path report_path = fs::path(config.out_dir) / "eval_report.txt";
  std::ofstream out(report_path);
  if (!out) throw DataError("eval: cannot write '" + report_path.string() + "'");
  metrics::write_report(out, report);
  return report;
}

std::string run_synth(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  SyntheticBenchmark bench = generate_synthetic_benchmark(spec);
  return write_benchmark(out_dir, bench);
}

namespace {

bool within_tol(double a, double b, double rel, double floor_abs, double& worst) {
  const double allowed = std::max(floor_abs, rel * std::max(std::fabs(a), std::fabs(b)));
  const double ratio = std::fabs(a - b) / allowed;
  worst = std::max(worst, ratio);
  return ratio <= 1.0;
}

struct TinyMlp {
  Tensor x, y;  // support batch
  Tensor qx, qy;  // query batch

  static TinyMlp make(uint64_t seed) {
    std::mt19937_64 rng(seed);
    TinyMlp m;
    m.x = randn({6, 3}, rng);
    m.y = randn({6, 1}, rng);
    m.qx = randn({6, 3}, rng);
    m.qy = randn({6, 1}, rng);
    return m;
  }

  static std::vector<Tensor> init_weights(uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {randn({3, 4}, rng, 0.7), randn({4}, rng, 0.2), randn({4, 1}, rng, 0.7),
            randn({1}, rng, 0.2)};
  }

  Tensor loss(const std::vector<Tensor>& w, const Tensor& bx, const Tensor& by) const {
    Tensor h = relu(add(matmul(bx, w[0]), broadcast_to_last_axis(w[1], {6, 4})));
    Tensor out = add(matmul(h, w[2]), broadcast_to_last_axis(w[3], {6, 1}));
    return mean(square(sub(out, by)));
  }
};

}  // namespace

MetaGradCheck meta_gradient_check(int inner_steps, bool second_order, uint64_t seed,
                                  double rel_tol, double abs_floor) {
  TinyMlp mlp = TinyMlp::make(derive_seed(seed, 10, 0));
  std::vector<Tensor> theta = TinyMlp::init_weights(derive_seed(seed, 11, 0));
  for (auto& t : theta) t.set_requires_grad(true);
  Tensor alpha = Tensor::scalar(0.05).set_requires_grad(true);
  Tensor gamma = Tensor::scalar(1.2).set_requires_grad(true);

  MetaGradCheck result;
  for (const auto& t : theta) result.parameter_count += static_cast<int>(t.size());

  LossFn support_loss = [&](const std::vector<Tensor>& w) {
    return mlp.loss(w, mlp.x, mlp.y);
  };

  auto adapted = inner_update_weights(theta, alpha, gamma, support_loss, inner_steps,
                                      second_order, /*retain_chain=*/true);
  Tensor query_loss = mlp.loss(adapted.weights, mlp.qx, mlp.qy);

  std::vector<Tensor> wrt = theta;
  wrt.push_back(alpha);
  wrt.push_back(gamma);
  auto analytic = grad(query_loss, wrt, {.zero_for_unreachable = true});
  result.gamma_grad = analytic.back().item();

  if (second_order) {
    // The meta objective as a plain function of (theta, alpha, gamma).
    auto objective = [&](const std::vector<Tensor>& args) {
      std::vector<Tensor> w(args.begin(), args.end() - 2);
      Tensor a = args[args.size() - 2];
      Tensor g = args[args.size() - 1];
      auto inner = inner_update_weights(w, a, g, support_loss, inner_steps,
                                        /*create_graph=*/true, /*retain_chain=*/true);
      return mlp.loss(inner.weights, mlp.qx, mlp.qy).item();
    };
    auto numeric = finite_difference_gradient(objective, wrt, 1e-5);

    result.theta_ok = true;
    for (size_t t = 0; t + 2 < wrt.size(); ++t) {
      for (int64_t i = 0; i < analytic[t].size(); ++i) {
        result.theta_ok &= within_tol(analytic[t].values()[i], numeric[t].values()[i],
                                      rel_tol, abs_floor, result.theta_worst);
      }
    }
    const size_t ai = wrt.size() - 2, gi = wrt.size() - 1;
    result.alpha_ok = within_tol(analytic[ai].item(), numeric[ai].item(), rel_tol,
                                 abs_floor, result.alpha_worst);
    result.gamma_ok = within_tol(analytic[gi].item(), numeric[gi].item(), rel_tol,
                                 abs_floor, result.gamma_worst);
  } else {
    // First-order semantics: the theta gradient equals the query-loss
    // gradient at the adapted weights, adaptation held fixed.
    auto at_adapted = [&](const std::vector<Tensor>& w) {
      return mlp.loss(w, mlp.qx, mlp.qy).item();
    };
    std::vector<Tensor> frozen;
    for (const auto& w : adapted.weights) frozen.push_back(w.detach());
    auto numeric = finite_difference_gradient(at_adapted, frozen, 1e-5);
    result.theta_ok = true;
    for (size_t t = 0; t + 2 < wrt.size(); ++t) {
      for (int64_t i = 0; i < analytic[t].size(); ++i) {
        result.theta_ok &= within_tol(analytic[t].values()[i], numeric[t].values()[i],
                                      rel_tol, abs_floor, result.theta_worst);
      }
    }
    result.alpha_ok = true;  // not checked under first-order semantics
    result.gamma_ok = true;
  }
  return result;
}

int run_gradcheck(const GradcheckConfig& config, std::ostream& out) {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, const std::string& detail = "") {
    out << (ok ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) out << " (" << detail << ")";
    out << "\n";
    if (!ok) ++failures;
  };

  // Primitive suite: reverse-mode gradients against central differences.
  {
    std::mt19937_64 rng(derive_seed(config.seed, 20, 0));
    struct Probe {
      const char* name;
      std::function<Tensor(const std::vector<Tensor>&)> expr;
      std::vector<Tensor> wrt;
    };
    Tensor a = randn({3, 4}, rng);
    Tensor b = randn({3, 4}, rng);
    Tensor m1 = randn({3, 4}, rng);
    Tensor m2 = randn({4, 2}, rng);
    Tensor img = randn({2, 6, 6, 3}, rng);
    Tensor ker = randn({3, 3, 3, 4}, rng, 0.5);
    std::vector<Probe> probes;
    probes.push_back({"elementwise chain",
                      [](const std::vector<Tensor>& w) {
                        return mean(square(mul(add(w[0], w[1]), sub(w[0], w[1]))));
                      },
                      {a, b}});
    probes.push_back({"matmul",
                      [](const std::vector<Tensor>& w) {
                        return sum(square(matmul(w[0], w[1])));
                      },
                      {m1, m2}});
    probes.push_back({"conv + pool + relu",
                      [](const std::vector<Tensor>& w) {
                        return mean(square(max_pool2d(relu(conv2d(w[0], w[1], 1)), 2)));
                      },
                      {img, ker}});

    for (auto& probe : probes) {
      for (auto& t : probe.wrt) t.set_requires_grad(true);
      Tensor loss = probe.expr(probe.wrt);
      auto analytic = grad(loss, probe.wrt);
      auto numeric = finite_difference_gradient(
          [&](const std::vector<Tensor>& w) { return probe.expr(w).item(); }, probe.wrt,
          1e-5);
      bool ok = true;
      double worst = 0.0;
      for (size_t t = 0; t < probe.wrt.size(); ++t) {
        for (int64_t i = 0; i < analytic[t].size(); ++i) {
          ok &= within_tol(analytic[t].values()[i], numeric[t].values()[i], 1e-4, 1e-6,
                           worst);
        }
      }
      char detail[64];
      std::snprintf(detail, sizeof(detail), "worst ratio %.3g", worst);
      report(std::string("primitives: ") + probe.name, ok, detail);
    }
  }

  // Second-order probe.
  if (config.first_order) {
    out << "[SKIP] second-order gradients (first-order mode)\n";
  } else {
    std::mt19937_64 rng(derive_seed(config.seed, 21, 0));
    Tensor w = randn({5}, rng);
    Tensor x = randn({5}, rng);
    w.set_requires_grad(true);
    auto f = [&x](const Tensor& ww) {
      return add(sum(square(mul(ww, x))), sum(mul(mul(ww, ww), ww)));
    };
    Tensor loss = f(w);
    auto g1 = grad(loss, {w}, {.create_graph = true});
    auto g2 = grad(sum(g1[0]), {w});
    auto fd = finite_difference_gradient(
        [&](const std::vector<Tensor>& args) {
          Tensor wt = args[0];
          auto g = grad(f(wt), {wt});
          double acc = 0.0;
          for (double v : g[0].values()) acc += v;
          return acc;
        },
        {w}, 1e-5);
    bool ok = true;
    double worst = 0.0;
    for (int64_t i = 0; i < g2[0].size(); ++i) {
      ok &= within_tol(g2[0].values()[i], fd[0].values()[i], 1e-3, 1e-6, worst);
    }
    char detail[64];
    std::snprintf(detail, sizeof(detail), "worst ratio %.3g", worst);
    report("second-order gradients", ok, detail);
  }

  // Meta-gradient through the inner loop.
  {
    MetaGradCheck check = meta_gradient_check(config.inner_steps, !config.first_order,
                                              config.seed);
    char detail[96];
    std::snprintf(detail, sizeof(detail), "%d params, u=%d, worst ratio %.3g",
                  check.parameter_count, config.inner_steps, check.theta_worst);
    report("meta-gradient: theta", check.theta_ok, detail);
    if (config.first_order) {
      out << "[SKIP] meta-gradient: alpha,gamma (first-order mode)\n";
    } else {
      std::snprintf(detail, sizeof(detail), "worst ratio %.3g", check.alpha_worst);
      report("meta-gradient: alpha", check.alpha_ok, detail);
      std::snprintf(detail, sizeof(detail), "worst ratio %.3g", check.gamma_worst);
      report("meta-gradient: gamma", check.gamma_ok, detail);
    }
    if (config.inner_steps == 1) {
      const bool zero = check.gamma_grad == 0.0;
      report("meta-gradient: gamma is exactly 0 at u=1", zero,
             "gamma_grad=" + std::to_string(check.gamma_grad));
    }
  }

  return failures == 0 ? 0 : 1;
}

}  // namespace metafas
