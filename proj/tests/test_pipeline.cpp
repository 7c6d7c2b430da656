#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "metafas/pipeline.hpp"

using namespace metafas;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const std::string& out_dir) {
  RunConfig c;
  c.seed = 7;
  c.out_dir = out_dir;
  c.data.synthetic.living_categories = 3;
  c.data.synthetic.spoofing_categories = 3;
  c.data.synthetic.samples_per_category = 10;
  c.data.synthetic.image_side = 8;
  c.data.synthetic.depth_side = 1;
  c.data.synthetic.seed = 3;
  c.model.input_side = 8;
  c.model.depth_side = 1;
  c.model.stem_channels = 2;
  c.model.channels = {2, 2, 2};
  c.model.head_channels = 2;
  c.episode.predefined_per_class = 3;
  c.episode.query_per_class = 3;
  c.episode.shot_menu = {0, 1, 2};
  c.learner.beta = 1e-3;
  c.learner.inner_steps = 1;
  c.learner.meta_batch = 2;
  c.learner.threads = 1;
  c.train.iterations = 3;
  c.train.pretrain_epochs = 1;
  c.train.pretrain_batch = 16;
  c.train.pretrain_lr = 1e-3;
  c.eval.shots = 1;
  c.eval.tasks = 3;
  return c;
}

}  // namespace

TEST_CASE("config json round trip") {
  RunConfig c = tiny_run("x");
  c.learner.adam_outer = true;
  c.episode.support_novel_only = true;
  c.schedule.alpha = 0.123;
  RunConfig back = run_config_from_json_text(run_config_to_json(c));
  CHECK(back.seed == c.seed);
  CHECK(back.model.channels == c.model.channels);
  CHECK(back.episode.shot_menu == c.episode.shot_menu);
  CHECK(back.episode.support_novel_only);
  CHECK(back.learner.adam_outer);
  CHECK(back.schedule.alpha == 0.123);
  CHECK(back.train.iterations == 3);
  CHECK(back.eval.tasks == 3);

  // partial configs keep defaults for everything unspecified
  RunConfig partial = run_config_from_json_text(R"({"seed": 5})");
  CHECK(partial.seed == 5);
  CHECK(partial.episode.shot_menu == std::vector<int>{0, 1, 3, 5, 7, 9});
  CHECK(partial.learner.beta == 1e-4);

  CHECK_THROWS_AS(run_config_from_json_text("{nope"), DataError);
  CHECK_THROWS_AS(run_config_from_json_file("/nonexistent.json"), DataError);
}

TEST_CASE("validation reports all violations at once") {
  RunConfig c = tiny_run("x");
  c.model.channels = {0};
  c.learner.beta = -1.0;
  c.eval.tasks = 0;
  c.data.source = "cloud";
  try {
    c.validate();
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("channel width") != std::string::npos);
    CHECK(msg.find("beta") != std::string::npos);
    CHECK(msg.find("eval.tasks") != std::string::npos);
    CHECK(msg.find("data.source") != std::string::npos);
  }
}

TEST_CASE("derived seeds separate streams and indices") {
  CHECK(derive_seed(1, 0, 0) != derive_seed(1, 0, 1));
  CHECK(derive_seed(1, 0, 0) != derive_seed(1, 1, 0));
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}

TEST_CASE("train/eval pipeline over synthetic and manifest sources") {
  const fs::path work = fs::temp_directory_path() / "metafas_pipeline_test";
  fs::remove_all(work);

  RunConfig c = tiny_run((work / "run").string());
  TrainOutputs out = run_train(c);
  CHECK(fs::exists(out.checkpoint_path));
  CHECK(fs::exists(out.log_path));

  // the log carries pretrain and per-iteration lines
  std::ifstream log(out.log_path);
  std::stringstream buf;
  buf << log.rdbuf();
  CHECK(buf.str().find("pretrain epoch 1 ") != std::string::npos);
  CHECK(buf.str().find("iter 3 ") != std::string::npos);
  CHECK(buf.str().find("alpha") != std::string::npos);

  auto report = run_eval(c, out.checkpoint_path);
  CHECK(report.task_count == 3);
  CHECK(fs::exists(fs::path(c.out_dir) / "eval_report.txt"));

  // materialize the same benchmark, then train from the manifest instead
  const std::string manifest = run_synth(c.data.synthetic, (work / "bench").string());
  RunConfig m = c;
  m.out_dir = (work / "run_manifest").string();
  m.data.source = "manifest";
  m.data.manifest_path = manifest;
  TrainOutputs mout = run_train(m);
  auto mreport = run_eval(m, mout.checkpoint_path);
  CHECK(mreport.task_count == 3);

  fs::remove_all(work);
}

TEST_CASE("gradcheck harness passes and prints verdicts") {
  std::ostringstream out;
  GradcheckConfig gc;
  gc.inner_steps = 2;
  CHECK(run_gradcheck(gc, out) == 0);
  CHECK(out.str().find("[PASS] meta-gradient: theta") != std::string::npos);
  CHECK(out.str().find("[FAIL]") == std::string::npos);

  std::ostringstream out_fo;
  gc.first_order = true;
  CHECK(run_gradcheck(gc, out_fo) == 0);
  CHECK(out_fo.str().find("[SKIP] second-order gradients") != std::string::npos);
}

TEST_CASE("geometry mismatch between benchmark and model is rejected") {
  RunConfig c = tiny_run("x");
  c.model.input_side = 16;
  c.model.depth_side = 2;
  CHECK_THROWS_AS(load_pools(c.data, c.model), ValueError);
}
