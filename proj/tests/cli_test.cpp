// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cstdlib>
#include <doctest.h>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "deltaforge/delta_ops.hpp"
#include "deltaforge/parallel.hpp"
#include "deltaforge/pipeline.hpp"
#include "deltaforge/rng.hpp"
#include "deltaforge/toylab.hpp"
#include "test_util.hpp"

using namespace deltaforge;
using namespace dftest;
using nlohmann::json;

namespace {

struct CliResult {
  int exit_code = 0;
  std::string out;
  json parsed() const { return json::parse(out.substr(0, out.find('\n'))); }
};

CliResult run(std::vector<std::string> args) {
  std::vector<const char*> argv{"deltaforge"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::stringstream captured;
  std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
  CliResult result;
  result.exit_code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old);
  result.out = captured.str();
  set_worker_count(1);
  return result;
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(DELTAFORGE_CLI_BIN) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

Checkpoint sample_checkpoint(uint64_t seed) {
  Rng rng(seed);
  RandomCheckpointOptions opt;
  opt.min_tensors = 3;
  opt.max_tensors = 6;
  opt.float_only = false;
  return random_checkpoint(rng, opt);
}

}  // namespace

TEST_CASE("cli diff then apply reproduces the fine-tuned checkpoint") {
  TempDir dir("cli");
  Rng rng(71);
  const Checkpoint base = random_checkpoint(rng);
  const Checkpoint ft = perturb_checkpoint(base, rng);
  save_checkpoint(base, dir.file("base.st"));
  save_checkpoint(ft, dir.file("ft.st"));

  const CliResult diff =
      run({"diff", "--finetuned", dir.file("ft.st").string(), "--base",
           dir.file("base.st").string(), "--out", dir.file("delta.st").string()});
  REQUIRE(diff.exit_code == 0);
  CHECK(diff.parsed()["tensors"].get<size_t>() == ft.tensor_count());

  const CliResult apply =
      run({"apply", "--target", dir.file("base.st").string(), "--diff",
           dir.file("delta.st").string(), "--scale", "1", "--out",
           dir.file("rec.st").string()});
  REQUIRE(apply.exit_code == 0);

  const CheckpointHandle rec = open_checkpoint(dir.file("rec.st"));
  for (const auto& [name, tensor] : ft.tensors()) {
    if (!tensor.is_float()) continue;
    CHECK(rec.load(name).to_f32() == tensor.to_f32());
  }
}

TEST_CASE("cli apply with scale zero recasts floats and copies the rest") {
  TempDir dir("cli");
  const Checkpoint target = sample_checkpoint(72);
  save_checkpoint(target, dir.file("t.st"));

  // zero diff over the float tensors
  DiffVector zero;
  for (const auto& [name, tensor] : target.tensors()) {
    if (tensor.is_float())
      zero.deltas.emplace(name,
                          Tensor::zeros(Dtype::F32, tensor.shape));
  }
  save_diff(zero, dir.file("zero.st"));

  const CliResult apply = run({"apply", "--target", dir.file("t.st").string(), "--diff",
                               dir.file("zero.st").string(), "--scale", "0", "--out",
                               dir.file("out.st").string(), "--report",
                               dir.file("report.json").string()});
  REQUIRE(apply.exit_code == 0);

  const CheckpointHandle out = open_checkpoint(dir.file("out.st"));
  for (const auto& [name, tensor] : target.tensors()) {
    if (tensor.is_float()) {
      // byte-equal after promotion-recast
      const Tensor expected =
          Tensor::cast_from_f32(tensor.to_f32(), tensor.dtype, tensor.shape);
      CHECK(bytes_equal(out.load(name), expected));
    } else {
      CHECK(bytes_equal(out.load(name), tensor));
    }
  }
  CHECK(std::filesystem::exists(dir.file("report.json")));
  const json report = json::parse(read_bytes(dir.file("report.json")));
  CHECK(report["scale"] == 0.0);
}

TEST_CASE("cli validate exit codes and report") {
  TempDir dir("cli");
  write_bytes(dir.file("good.st"), from_hex(kFixtureValid2x2));
  write_bytes(dir.file("bad.st"), from_hex(kFixtureOverlap));

  const CliResult good = run({"validate", dir.file("good.st").string()});
  CHECK(good.exit_code == 0);
  CHECK(good.parsed()["valid"] == true);

  const CliResult bad = run({"validate", dir.file("bad.st").string()});
  CHECK(bad.exit_code == 2);
  CHECK(bad.parsed()["valid"] == false);
  CHECK(bad.parsed()["violations"].size() == 1);
}

TEST_CASE("cli exit code contract") {
  TempDir dir("cli");

  // 1: usage errors
  CHECK(run({"frobnicate"}).exit_code == 1);
  CHECK(run({"diff", "--base", "x.st"}).exit_code == 1);  // missing required flags

  // 2: data errors
  CHECK(run({"diff", "--finetuned", dir.file("none.st").string(), "--base",
             dir.file("none.st").string(), "--out", dir.file("o.st").string()})
            .exit_code == 2);

  // 3: numeric failure (overflow to inf from finite inputs)
  Checkpoint big;
  big.add("w", Tensor::from_f32(std::vector<float>{3.0e38f}, {}));
  save_checkpoint(big, dir.file("big.st"));
  DiffVector huge;
  huge.deltas.emplace("w", Tensor::from_f32(std::vector<float>{3.0e38f}, {}));
  save_diff(huge, dir.file("huge.st"));
  CHECK(run({"apply", "--target", dir.file("big.st").string(), "--diff",
             dir.file("huge.st").string(), "--out", dir.file("boom.st").string()})
            .exit_code == 3);
  // failed subcommands leave no partial outputs behind
  CHECK_FALSE(std::filesystem::exists(dir.file("boom.st")));
}

TEST_CASE("cli interp, path, merge, stats, distance") {
  TempDir dir("cli");
  Checkpoint a, b;
  a.add("w", Tensor::from_f32(std::vector<float>{2.0f}, {}));
  b.add("w", Tensor::from_f32(std::vector<float>{4.0f}, {}));
  save_checkpoint(a, dir.file("a.st"));
  save_checkpoint(b, dir.file("b.st"));
  DiffVector d;
  d.deltas.emplace("w", Tensor::from_f32(std::vector<float>{0.5f}, {}));
  save_diff(d, dir.file("d.st"));

  REQUIRE(run({"interp", "--base", dir.file("a.st").string(), "--target",
               dir.file("b.st").string(), "--lambda", "0.5", "--out",
               dir.file("mid.st").string()})
              .exit_code == 0);
  CHECK(open_checkpoint(dir.file("mid.st")).load("w").to_f32() ==
        std::vector<float>{3.0f});

  REQUIRE(run({"path", "--base", dir.file("a.st").string(), "--target",
               dir.file("b.st").string(), "--diff", dir.file("d.st").string(), "--lambda",
               "0.5", "--out", dir.file("p.st").string()})
              .exit_code == 0);
  // 4 + 0.5*(2-4) + 0.5 = 3.5
  CHECK(open_checkpoint(dir.file("p.st")).load("w").to_f32() == std::vector<float>{3.5f});

  REQUIRE(run({"merge", "--base", dir.file("a.st").string(), "--diff",
               dir.file("d.st").string(), "--diff", dir.file("d.st").string(), "--lambda",
               "1", "--out", dir.file("m.st").string()})
              .exit_code == 0);
  CHECK(open_checkpoint(dir.file("m.st")).load("w").to_f32() == std::vector<float>{3.0f});

  const CliResult stats = run({"stats", "--diff", dir.file("d.st").string()});
  REQUIRE(stats.exit_code == 0);
  CHECK(stats.parsed()["global"]["l2"] == 0.5);

  const CliResult dist = run({"distance", "--base", dir.file("a.st").string(), "--target",
                              dir.file("b.st").string()});
  REQUIRE(dist.exit_code == 0);
  CHECK(dist.parsed()["l2"] == 2.0);
}

TEST_CASE("cli toy workflow produces self-describing artifacts") {
  TempDir dir("cli");
  REQUIRE(run({"toy", "gen", "--kind", "teacher-mlp-regression", "--seed", "5", "--n", "64",
               "--in-dim", "2", "--out-dim", "1", "--out", dir.file("data.st").string()})
              .exit_code == 0);
  REQUIRE(run({"toy", "gen", "--kind", "teacher-mlp-regression", "--seed", "5",
               "--data-seed", "6", "--n", "64", "--in-dim", "2", "--out-dim", "1", "--split",
               "eval", "--out", dir.file("eval.st").string()})
              .exit_code == 0);

  const CliResult trained =
      run({"toy", "train", "--data", dir.file("data.st").string(), "--eval-data",
           dir.file("eval.st").string(), "--layers", "2,8,1", "--steps", "200",
           "--batch-size", "16", "--lr", "0.05", "--eval-every", "50", "--seed", "1",
           "--out", dir.file("model.st").string(), "--trace", dir.file("trace.csv").string()});
  REQUIRE(trained.exit_code == 0);
  CHECK(trained.parsed().contains("final_eval_loss"));
  CHECK(read_bytes(dir.file("trace.csv")).rfind("step,train_loss,eval_loss", 0) == 0);

  const CliResult eval = run(
      {"toy", "eval", "--model", dir.file("model.st").string(), "--data",
       dir.file("eval.st").string()});
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.parsed()["loss"].get<double>() >= 0.0);

  // snapshots land in the requested directory
  REQUIRE(run({"toy", "train", "--data", dir.file("data.st").string(), "--layers", "2,8,1",
               "--steps", "100", "--seed", "1", "--out", dir.file("m2.st").string(),
               "--snapshot-steps", "40,80", "--snapshot-dir", dir.path().string()})
              .exit_code == 0);
  CHECK(std::filesystem::exists(dir.file("snap_step40.st")));
  CHECK(std::filesystem::exists(dir.file("snap_step80.st")));
}

TEST_CASE("cli config file mirrors the flags") {
  TempDir dir("cli");
  write_bytes(dir.file("task.cfg"),
              "[toy.gen]\nkind=teacher-mlp-regression\nseed=5\nn=64\nin-dim=2\nout-dim=1\n");
  const CliResult from_config = run({"--config", dir.file("task.cfg").string(), "toy", "gen",
                                     "--out", dir.file("c.st").string()});
  REQUIRE(from_config.exit_code == 0);
  const CliResult from_flags =
      run({"toy", "gen", "--kind", "teacher-mlp-regression", "--seed", "5", "--n", "64",
           "--in-dim", "2", "--out-dim", "1", "--out", dir.file("f.st").string()});
  REQUIRE(from_flags.exit_code == 0);
  const CheckpointHandle c = open_checkpoint(dir.file("c.st"));
  const CheckpointHandle f = open_checkpoint(dir.file("f.st"));
  CHECK(bytes_equal(c.load("inputs"), f.load("inputs")));
  CHECK(bytes_equal(c.load("targets"), f.load("targets")));
}

TEST_CASE("cli barrier and matrix read toy artifacts") {
  TempDir dir("cli");
  // tiny models trained briefly from a shared init
  TaskSpec task;
  task.seed = 31;
  task.n = 64;
  task.in_dim = 2;
  task.out_dim = 1;
  const Dataset data = gen_task(task);
  ToyModelSpec spec;
  spec.layer_sizes = {2, 6, 1};
  spec.seed = 31;
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.batch_size = 16;
  cfg.eval_every = 30;
  const ToyModel m0 = init_model(spec);
  cfg.seed = 1;
  const ToyModel m1 = train(m0, data, cfg).model;
  cfg.seed = 2;
  const ToyModel m2 = train(m0, data, cfg).model;

  save_checkpoint(model_to_checkpoint(m1), dir.file("m1.st"));
  save_checkpoint(model_to_checkpoint(m2), dir.file("m2.st"));
  save_dataset(data, dir.file("data.st"));
  const DiffVector d1 = compute_diff(model_to_checkpoint(m1), model_to_checkpoint(m0));
  const DiffVector d2 = compute_diff(model_to_checkpoint(m2), model_to_checkpoint(m0));
  save_diff(d1, dir.file("d1.st"));
  save_diff(d2, dir.file("d2.st"));
  save_checkpoint(model_to_checkpoint(m0), dir.file("m0.st"));

  const CliResult barrier =
      run({"barrier", "--base", dir.file("m1.st").string(), "--target",
           dir.file("m2.st").string(), "--eval-data", dir.file("data.st").string(), "--grid",
           "0,0.5,1", "--out", dir.file("profile.csv").string()});
  REQUIRE(barrier.exit_code == 0);
  CHECK(barrier.parsed()["losses"].size() == 3);
  CHECK(std::filesystem::exists(dir.file("profile.csv")));

  const CliResult matrix = run(
      {"matrix", "--base", dir.file("m0.st").string(), "--base", dir.file("m0.st").string(),
       "--diff", dir.file("d1.st").string(), "--diff", dir.file("d2.st").string(),
       "--finetuned", dir.file("m1.st").string(), "--finetuned", dir.file("m2.st").string(),
       "--eval-data", dir.file("data.st").string(), "--out", dir.file("matrix.csv").string()});
  REQUIRE(matrix.exit_code == 0);
  CHECK(matrix.parsed()["versions"].size() == 2);
  CHECK(std::filesystem::exists(dir.file("matrix.csv")));
}

TEST_CASE("cli pipeline runs are byte-identical across invocations") {
  TempDir dir("cli");

  // build a 2-version grid through the binary itself
  REQUIRE(run_binary("toy gen --kind teacher-mlp-regression --seed 40 --n 96 --in-dim 2 "
                     "--out-dim 1 --out " +
                     dir.file("pre.st").string()) == 0);
  REQUIRE(run_binary("toy train --data " + dir.file("pre.st").string() +
                     " --layers 2,8,1 --steps 300 --seed 2 --out " +
                     dir.file("last.st").string() + " --snapshot-steps 150,300 --snapshot-dir " +
                     dir.path().string()) == 0);

  PipelineManifest manifest;
  manifest.versions = {dir.file("snap_step150.st").string(),
                       dir.file("snap_step300.st").string()};
  manifest.strategy = Strategy::IterativeRecycle;
  TaskSpec ft;
  ft.seed = 41;
  ft.n = 64;
  ft.in_dim = 2;
  ft.out_dim = 1;
  ft.split = Split::Finetune;
  manifest.finetuner.dataset = ft;
  manifest.finetuner.train.steps = 120;
  manifest.finetuner.train.batch_size = 16;
  manifest.finetuner.train.eval_every = 20;
  TaskSpec ev = ft;
  ev.data_seed = 42;
  ev.split = Split::Eval;
  manifest.evaluator.dataset = ev;
  manifest.output_dir = dir.file("runA").string();
  write_bytes(dir.file("m.json"), manifest.to_json_string());

  REQUIRE(run_binary("pipeline run --manifest " + dir.file("m.json").string() + " --seed 0") ==
          0);
  REQUIRE(run_binary("--threads 4 pipeline run --manifest " + dir.file("m.json").string() +
                     " --seed 0 --out-dir " + dir.file("runB").string()) == 0);

  size_t compared = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.file("runA"))) {
    const std::string name = entry.path().filename().string();
    if (name == "manifest.json") continue;
    CHECK(read_bytes(entry.path()) == read_bytes(dir.file("runB") / name));
    ++compared;
  }
  CHECK(compared >= 8);
}
