#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metafas/pipeline.hpp"

namespace {

using namespace metafas;

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

struct CommonOverrides {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;
  int threads = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON file");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--threads", threads,
                    "task workers (any count gives identical results)");
  }

  RunConfig load() const {
    RunConfig config;
    if (!config_path.empty()) config = run_config_from_json_file(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (seed >= 0) config.seed = static_cast<uint64_t>(seed);
    if (threads >= 1) config.learner.threads = threads;
    return config;
  }
};

int dispatch(int argc, char** argv) {
  CLI::App app{"zero-/few-shot face anti-spoofing meta-learning engine"};
  app.require_subcommand(1);

  // synth -------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "materialize the synthetic benchmark");
  SyntheticSpec spec;
  std::string synth_out = "benchmark";
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", spec.seed, "benchmark seed");
  synth->add_option("--living", spec.living_categories, "living categories per split");
  synth->add_option("--spoofing", spec.spoofing_categories, "spoofing categories per split");
  synth->add_option("--samples", spec.samples_per_category, "samples per category");
  synth->add_option("--image-side", spec.image_side, "image side in pixels");
  synth->add_option("--depth-side", spec.depth_side, "depth label side in pixels");

  // train -------------------------------------------------------------
  auto* train = app.add_subcommand("train", "pretrain + fusion meta-training");
  CommonOverrides train_common;
  train_common.attach(train);
  std::string train_mode, shot_menu_text, manifest_path;
  int iterations = -1;
  bool frozen_schedule = false, first_order = false, support_novel_only = false,
       adam_outer = false;
  train->add_option("--mode", train_mode, "meta|baseline");
  train->add_option("--iterations", iterations, "outer iterations");
  train->add_option("--manifest", manifest_path, "train from a dataset manifest");
  train->add_option("--shot-menu", shot_menu_text,
                    "comma list of shot counts, e.g. 0,1,3,5,7,9 (a single value "
                    "disables shot mixing)");
  train->add_flag("--frozen-schedule", frozen_schedule,
                  "freeze alpha/gamma at their initial values (gamma pinned to 1)");
  train->add_flag("--first-order", first_order,
                  "drop gradient flow through the inner steps");
  train->add_flag("--support-novel-only", support_novel_only,
                  "drop predefined categories from the support set");
  train->add_flag("--adam-outer", adam_outer, "adaptive-moment outer update");

  // eval --------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
  CommonOverrides eval_common;
  eval_common.attach(eval);
  std::string checkpoint_path, eval_mode, eval_manifest;
  int shots = -1, tasks = -1, inner_steps = -2;
  bool eval_support_novel_only = false;
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--mode", eval_mode, "meta|baseline");
  eval->add_option("--manifest", eval_manifest, "evaluate on a dataset manifest");
  eval->add_option("--shots", shots, "K (novel samples per class in the support)");
  eval->add_option("--tasks", tasks, "number of testing tasks (T)");
  eval->add_option("--inner-steps", inner_steps, "test-time inner steps");
  eval->add_flag("--support-novel-only", eval_support_novel_only,
                 "drop predefined categories from the support set");

  // gradcheck ----------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification");
  GradcheckConfig gc;
  gradcheck->add_option("--inner-steps", gc.inner_steps, "inner steps for the meta check");
  gradcheck->add_flag("--first-order", gc.first_order, "first-order semantics");
  gradcheck->add_option("--seed", gc.seed, "probe seed");

  CLI11_PARSE(app, argc, argv);

  if (synth->parsed()) {
    const std::string manifest = run_synth(spec, synth_out);
    std::cout << "wrote " << manifest << "\n";
    return 0;
  }

  if (train->parsed()) {
    RunConfig config = train_common.load();
    if (!train_mode.empty()) config.train.mode = train_mode;
    if (iterations >= 0) config.train.iterations = iterations;
    if (!manifest_path.empty()) {
      config.data.source = "manifest";
      config.data.manifest_path = manifest_path;
    }
    if (!shot_menu_text.empty()) config.episode.shot_menu = parse_int_list(shot_menu_text);
    if (frozen_schedule) {
      config.schedule.trainable = false;
      config.schedule.gamma = 1.0;
    }
    if (first_order) config.learner.second_order = false;
    if (support_novel_only) config.episode.support_novel_only = true;
    if (adam_outer) config.learner.adam_outer = true;

    TrainOutputs outputs = run_train(config);
    std::cout << "checkpoint " << outputs.checkpoint_path << "\n"
              << "log " << outputs.log_path << "\n";
    return 0;
  }

  if (eval->parsed()) {
    RunConfig config = eval_common.load();
    if (!eval_mode.empty()) config.eval.mode = eval_mode;
    if (!eval_manifest.empty()) {
      config.data.source = "manifest";
      config.data.manifest_path = eval_manifest;
    }
    if (shots >= 0) config.eval.shots = shots;
    if (tasks >= 1) config.eval.tasks = tasks;
    if (inner_steps >= -1) config.eval.inner_steps = inner_steps;
    if (eval_support_novel_only) config.episode.support_novel_only = true;

    metrics::EvalReport report = run_eval(config, checkpoint_path);
    metrics::write_report(std::cout, report);
    return 0;
  }

  return run_gradcheck(gc, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const metafas::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 2;
  } catch (const metafas::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
