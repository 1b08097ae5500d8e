// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <charconv>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deltaforge/connectivity.hpp"
#include "deltaforge/delta_ops.hpp"
#include "deltaforge/parallel.hpp"
#include "deltaforge/pipeline.hpp"
#include "deltaforge/rng.hpp"
#include "deltaforge/tensor_store.hpp"
#include "deltaforge/toylab.hpp"

namespace deltaforge {

namespace {

using nlohmann::json;

struct GlobalOptions {
  size_t threads = 0;  // 0 = leave the DELTAFORGE_THREADS / default value
  bool verbose = false;
};

void emit(const GlobalOptions& opts, const json& result, const std::string& note) {
  std::cout << result.dump() << "\n";
  if (opts.verbose && !note.empty()) std::cout << "# " << note << "\n";
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t comma = text.find(',', pos);
    const std::string tok =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size())
        raise(ErrorKind::InvalidArgument, "bad grid value \"" + tok + "\"");
      grid.push_back(v);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return grid;
}

std::vector<int64_t> parse_int_list(const std::string& text) {
  std::vector<int64_t> out;
  for (double v : parse_grid(text)) out.push_back(static_cast<int64_t>(v));
  return out;
}

MismatchPolicy parse_policy(const std::string& name) {
  if (name == "skip") return MismatchPolicy::SkipMismatch;
  if (name == "error") return MismatchPolicy::ErrorOnMismatch;
  raise(ErrorKind::InvalidArgument, "--on-mismatch expects skip or error");
}

DtypePolicy parse_dtype_policy(const std::string& name) {
  DtypePolicy policy;
  if (!dtype_policy_from_name(name, policy))
    raise(ErrorKind::InvalidArgument, "--dtype-policy expects native or promote-f32");
  return policy;
}

// Model spec for evaluation: explicit --layers flags win over metadata.
ToyModelSpec resolve_model_spec(const CheckpointSource& ckpt, const std::string& layers,
                                const std::string& activation, const std::string& loss) {
  if (layers.empty()) return spec_from_metadata(ckpt);
  ToyModelSpec spec;
  spec.layer_sizes = parse_int_list(layers);
  if (!activation.empty() && !activation_from_name(activation, spec.activation))
    raise(ErrorKind::InvalidArgument, "unknown activation \"" + activation + "\"");
  if (!loss.empty() && !loss_from_name(loss, spec.loss))
    raise(ErrorKind::InvalidArgument, "unknown loss \"" + loss + "\"");
  spec.validate();
  return spec;
}

json stats_to_json(const DiffStats& stats) { return json::parse(stats.to_json_string()); }

// --- subcommand bodies ------------------------------------------------------

struct DiffArgs {
  std::string finetuned, base, out, report;
};

int cmd_diff(const GlobalOptions& opts, const DiffArgs& a) {
  const CheckpointHandle ft = open_checkpoint(a.finetuned);
  const CheckpointHandle base = open_checkpoint(a.base);
  const DiffVector diff = compute_diff(ft, base);
  save_diff(diff, a.out);
  const DiffStats stats = diff_stats(diff);
  if (!a.report.empty()) write_text_atomic(a.report, stats.to_json_string());
  emit(opts,
       {{"out", a.out}, {"tensors", diff.deltas.size()}, {"global_l2", stats.global_l2}},
       "diff " + a.finetuned + " - " + a.base + " -> " + a.out);
  return 0;
}

struct ApplyArgs {
  std::string target, diff, out, report;
  double scale = 1.0;
  std::string on_mismatch = "skip";
  std::string dtype_policy = "native";
};

int cmd_apply(const GlobalOptions& opts, const ApplyArgs& a) {
  const CheckpointHandle target = open_checkpoint(a.target);
  const CheckpointHandle diff_file = open_checkpoint(a.diff);
  const DiffVector diff = load_diff(diff_file);
  const AlignmentPlan plan = align(diff.metas(), target.metas(), parse_policy(a.on_mismatch));
  ApplyResult result = apply_diff(target, diff, a.scale, plan, parse_dtype_policy(a.dtype_policy));
  result.report.output_id = a.out;
  save_checkpoint(result.checkpoint, a.out);
  if (!a.report.empty()) write_text_atomic(a.report, result.report.to_json_string());
  emit(opts,
       {{"out", a.out},
        {"applied", result.report.applied},
        {"skipped_shape", result.report.skipped_shape},
        {"missing_in_target", result.report.missing_in_target},
        {"untouched", result.report.untouched},
        {"scale", a.scale}},
       "patched " + a.target + " with " + std::to_string(result.report.applied) + " deltas");
  return 0;
}

struct TwoCkptArgs {
  std::string base, target, out;
  double lambda = 0.5;
};

int cmd_interp(const GlobalOptions& opts, const TwoCkptArgs& a) {
  const CheckpointHandle ca = open_checkpoint(a.base);
  const CheckpointHandle cb = open_checkpoint(a.target);
  const Checkpoint out = interpolate(ca, cb, a.lambda);
  save_checkpoint(out, a.out);
  emit(opts, {{"out", a.out}, {"lambda", a.lambda}}, "interpolated checkpoint written");
  return 0;
}

struct PathArgs {
  std::string base, target, diff, out;
  double lambda = 1.0;
};

int cmd_path(const GlobalOptions& opts, const PathArgs& a) {
  const CheckpointHandle ms = open_checkpoint(a.base);
  const CheckpointHandle mt = open_checkpoint(a.target);
  const DiffVector diff = load_diff(open_checkpoint(a.diff));
  const Checkpoint out = transfer_path(ms, mt, diff, a.lambda);
  save_checkpoint(out, a.out);
  emit(opts, {{"out", a.out}, {"lambda", a.lambda}}, "transfer-path checkpoint written");
  return 0;
}

struct MergeArgs {
  std::string base, out;
  std::vector<std::string> diffs;
  double lambda = 1.0;
};

int cmd_merge(const GlobalOptions& opts, const MergeArgs& a) {
  const CheckpointHandle base = open_checkpoint(a.base);
  std::vector<DiffVector> diffs;
  for (const auto& path : a.diffs) diffs.push_back(load_diff(open_checkpoint(path)));
  const Checkpoint out = merge_task_vectors(base, diffs, a.lambda);
  save_checkpoint(out, a.out);
  emit(opts, {{"out", a.out}, {"diffs", a.diffs.size()}, {"lambda", a.lambda}},
       "merged task vectors written");
  return 0;
}

struct StatsArgs {
  std::string diff, out;
};

int cmd_stats(const GlobalOptions& opts, const StatsArgs& a) {
  const DiffVector diff = load_diff(open_checkpoint(a.diff));
  const DiffStats stats = diff_stats(diff);
  if (!a.out.empty()) write_text_atomic(a.out, stats.to_json_string());
  emit(opts, stats_to_json(stats), "stats over " + std::to_string(diff.deltas.size()) + " tensors");
  return 0;
}

struct DistanceArgs {
  std::string base, target, reference;
};

int cmd_distance(const GlobalOptions& opts, const DistanceArgs& a) {
  const CheckpointHandle ca = open_checkpoint(a.base);
  const CheckpointHandle cb = open_checkpoint(a.target);
  std::optional<DiffVector> reference;
  if (!a.reference.empty()) reference = load_diff(open_checkpoint(a.reference));
  const ParamDistance d = param_distance(ca, cb, reference ? &*reference : nullptr);
  json j{{"l2", d.l2}};
  if (d.cosine_of_diffs_vs_reference) j["cosine"] = *d.cosine_of_diffs_vs_reference;
  emit(opts, j, "parameter distance");
  return 0;
}

struct BarrierArgs {
  std::string base, target, eval_data, out, json_out, grid;
  std::string layers, activation, loss;
};

int cmd_barrier(const GlobalOptions& opts, const BarrierArgs& a) {
  const CheckpointHandle ca = open_checkpoint(a.base);
  const CheckpointHandle cb = open_checkpoint(a.target);
  const Dataset data = load_dataset(open_checkpoint(a.eval_data));
  const ToyModelSpec spec = resolve_model_spec(ca, a.layers, a.activation, a.loss);
  InterpolationSpec grid_spec;
  if (!a.grid.empty()) grid_spec.grid = parse_grid(a.grid);
  const BarrierProfile profile =
      loss_barrier(ca, cb, make_toy_evaluator(spec, data), grid_spec);
  if (!a.out.empty()) write_text_atomic(a.out, profile.to_csv());
  if (!a.json_out.empty()) write_text_atomic(a.json_out, profile.to_json_string());
  emit(opts, json::parse(profile.to_json_string()), "loss barrier profile");
  return 0;
}

struct MatrixArgs {
  std::vector<std::string> bases, diffs, finetuned;
  std::string eval_data, out, json_out;
  std::string layers, activation, loss;
};

int cmd_matrix(const GlobalOptions& opts, const MatrixArgs& a) {
  std::vector<CheckpointHandle> bases, finetuned;
  for (const auto& p : a.bases) bases.push_back(open_checkpoint(p));
  for (const auto& p : a.finetuned) finetuned.push_back(open_checkpoint(p));
  std::vector<DiffVector> diffs;
  for (const auto& p : a.diffs) diffs.push_back(load_diff(open_checkpoint(p)));

  const Dataset data = load_dataset(open_checkpoint(a.eval_data));
  if (bases.empty()) raise(ErrorKind::InvalidArgument, "matrix needs at least one --base");
  const ToyModelSpec spec = resolve_model_spec(bases.front(), a.layers, a.activation, a.loss);

  std::vector<const CheckpointSource*> base_ptrs, ft_ptrs;
  for (const auto& b : bases) base_ptrs.push_back(&b);
  for (const auto& f : finetuned) ft_ptrs.push_back(&f);

  const EffectivenessMatrix m =
      effectiveness_matrix(base_ptrs, diffs, ft_ptrs, make_toy_evaluator(spec, data));
  if (!a.out.empty()) write_text_atomic(a.out, m.to_csv());
  if (!a.json_out.empty()) write_text_atomic(a.json_out, m.to_json_string());
  emit(opts, json::parse(m.to_json_string()), "transfer effectiveness matrix");
  return 0;
}

struct ToyGenArgs {
  std::string kind = "teacher-mlp-regression";
  uint64_t seed = 0;
  std::optional<uint64_t> data_seed;
  int64_t n = 256;
  int64_t in_dim = 2;
  int64_t out_dim = 1;
  int64_t hidden = 8;
  double separation = 6.0;
  double noise = 0.0;
  std::string shift;
  std::string split = "pretrain";
  std::string out;
};

int cmd_toy_gen(const GlobalOptions& opts, const ToyGenArgs& a) {
  TaskSpec task;
  if (!task_kind_from_name(a.kind, task.kind))
    raise(ErrorKind::InvalidArgument, "unknown task kind \"" + a.kind + "\"");
  task.seed = a.seed;
  task.data_seed = a.data_seed;
  task.n = a.n;
  task.in_dim = a.in_dim;
  task.out_dim = a.out_dim;
  task.teacher_hidden = a.hidden;
  task.separation = a.separation;
  task.noise_std = a.noise;
  if (!a.shift.empty())
    for (double v : parse_grid(a.shift)) task.input_shift.push_back(v);
  if (!split_from_name(a.split, task.split))
    raise(ErrorKind::InvalidArgument, "unknown split \"" + a.split + "\"");

  const Dataset ds = gen_task(task);
  save_dataset(ds, a.out);
  emit(opts, {{"out", a.out}, {"rows", ds.rows}, {"in_dim", ds.in_dim}, {"out_dim", ds.out_dim}},
       "dataset written");
  return 0;
}

struct ToyTrainArgs {
  std::string data, eval_data, init, out, trace;
  std::string layers, activation = "tanh", loss = "mse";
  int64_t steps = 1000;
  int64_t batch_size = 32;
  double lr = 0.05;
  int64_t eval_every = 50;
  std::optional<double> target_loss;
  uint64_t seed = 0;
  std::string snapshot_steps, snapshot_dir;
};

int cmd_toy_train(const GlobalOptions& opts, const ToyTrainArgs& a) {
  const Dataset data = load_dataset(open_checkpoint(a.data));
  std::optional<Dataset> eval_data;
  if (!a.eval_data.empty()) eval_data = load_dataset(open_checkpoint(a.eval_data));

  ToyModel model;
  if (!a.init.empty()) {
    const CheckpointHandle init = open_checkpoint(a.init);
    const ToyModelSpec spec = resolve_model_spec(init, a.layers, a.activation, a.loss);
    model = checkpoint_to_model(init, spec);
  } else {
    if (a.layers.empty())
      raise(ErrorKind::InvalidArgument, "toy train needs --init or --layers");
    ToyModelSpec spec;
    spec.layer_sizes = parse_int_list(a.layers);
    if (!activation_from_name(a.activation, spec.activation))
      raise(ErrorKind::InvalidArgument, "unknown activation \"" + a.activation + "\"");
    if (!loss_from_name(a.loss, spec.loss))
      raise(ErrorKind::InvalidArgument, "unknown loss \"" + a.loss + "\"");
    spec.seed = a.seed;
    model = init_model(spec);
  }

  TrainConfig cfg;
  cfg.steps = a.steps;
  cfg.batch_size = a.batch_size;
  cfg.learning_rate = a.lr;
  cfg.eval_every = a.eval_every;
  cfg.target_loss = a.target_loss;
  cfg.seed = a.seed;

  StepObserver observer;
  std::vector<int64_t> snapshot_steps;
  if (!a.snapshot_steps.empty()) {
    if (a.snapshot_dir.empty())
      raise(ErrorKind::InvalidArgument, "--snapshot-steps needs --snapshot-dir");
    snapshot_steps = parse_int_list(a.snapshot_steps);
    observer = [&](int64_t step, const ToyModel& snapshot) {
      for (int64_t s : snapshot_steps) {
        if (s == step) {
          save_checkpoint(model_to_checkpoint(snapshot),
                          std::filesystem::path(a.snapshot_dir) /
                              ("snap_step" + std::to_string(step) + ".st"));
        }
      }
    };
  }

  const TrainResult result =
      train(model, data, cfg, eval_data ? &*eval_data : nullptr, observer);
  save_checkpoint(model_to_checkpoint(result.model), a.out);
  if (!a.trace.empty()) write_text_atomic(a.trace, result.trace.to_csv());

  json j{{"out", a.out}};
  if (!result.trace.records.empty()) {
    j["final_train_loss"] = result.trace.records.back().train_loss;
    j["final_eval_loss"] = result.trace.records.back().eval_loss;
  }
  if (result.trace.steps_to_target) j["steps_to_target"] = *result.trace.steps_to_target;
  emit(opts, j, "trained for " + std::to_string(a.steps) + " steps");
  return 0;
}

struct ToyEvalArgs {
  std::string model, data;
  std::string layers, activation, loss;
};

int cmd_toy_eval(const GlobalOptions& opts, const ToyEvalArgs& a) {
  const CheckpointHandle ckpt = open_checkpoint(a.model);
  const ToyModelSpec spec = resolve_model_spec(ckpt, a.layers, a.activation, a.loss);
  const ToyModel model = checkpoint_to_model(ckpt, spec);
  const Dataset data = load_dataset(open_checkpoint(a.data));
  const EvalResult result = evaluate(model, data);
  json j{{"loss", result.loss}};
  if (result.accuracy) j["accuracy"] = *result.accuracy;
  emit(opts, j, "evaluation");
  return 0;
}

struct PipelineArgs {
  std::string manifest;
  std::optional<uint64_t> seed;
  std::string out_dir;
};

int cmd_pipeline_run(const GlobalOptions& opts, const PipelineArgs& a) {
  PipelineManifest manifest = load_manifest(a.manifest);
  if (a.seed) manifest.seed = *a.seed;
  if (!a.out_dir.empty()) manifest.output_dir = a.out_dir;
  const PipelineReport report = run_pipeline(manifest);
  emit(opts,
       {{"output_dir", manifest.output_dir},
        {"strategy", strategy_name(report.strategy)},
        {"versions", report.rows.size()}},
       "pipeline finished; report under " + manifest.output_dir);
  return 0;
}

int cmd_validate(const GlobalOptions& opts, const std::string& path) {
  const FormatReport report = validate_format(path);
  json violations = json::array();
  for (const auto& v : report.violations)
    violations.push_back({{"byte", v.byte_offset}, {"message", v.message}});
  emit(opts, {{"path", path}, {"valid", report.valid()}, {"violations", violations}},
       report.valid() ? "file is well-formed" : report.to_text());
  return report.valid() ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"deltaforge: checkpoint diff/transfer toolkit"};
  app.require_subcommand(1);

  GlobalOptions opts;
  app.add_option("--threads", opts.threads, "worker cap for parallel sections")
      ->envname("DELTAFORGE_THREADS")
      ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", opts.verbose, "add human-readable notes to the output stream");
  app.set_config("--config", "",
                 "key=value config file; keys mirror flag names, one [sub.command] "
                 "section per subcommand");

  DiffArgs diff_args;
  auto* diff = app.add_subcommand("diff", "extract a diff vector (finetuned - base)");
  diff->add_option("--finetuned", diff_args.finetuned)->required();
  diff->add_option("--base", diff_args.base)->required();
  diff->add_option("--out", diff_args.out)->required();
  diff->add_option("--report", diff_args.report, "write diff stats JSON here");

  ApplyArgs apply_args;
  auto* apply = app.add_subcommand("apply", "apply a diff vector to a target checkpoint");
  apply->add_option("--target", apply_args.target)->required();
  apply->add_option("--diff", apply_args.diff)->required();
  apply->add_option("--out", apply_args.out)->required();
  apply->add_option("--scale", apply_args.scale);
  apply->add_option("--on-mismatch", apply_args.on_mismatch)
      ->check(CLI::IsMember({"skip", "error"}));
  apply->add_option("--dtype-policy", apply_args.dtype_policy)
      ->check(CLI::IsMember({"native", "promote-f32"}));
  apply->add_option("--report", apply_args.report, "write the transfer report JSON here");

  TwoCkptArgs interp_args;
  auto* interp = app.add_subcommand("interp", "interpolate between two checkpoints");
  interp->add_option("--base", interp_args.base, "lambda-0 endpoint")->required();
  interp->add_option("--target", interp_args.target, "lambda-1 endpoint")->required();
  interp->add_option("--lambda", interp_args.lambda)->required();
  interp->add_option("--out", interp_args.out)->required();

  PathArgs path_args;
  auto* path = app.add_subcommand(
      "path", "point on the diff-carrying path between two base versions");
  path->add_option("--base", path_args.base, "source base version")->required();
  path->add_option("--target", path_args.target, "target base version")->required();
  path->add_option("--diff", path_args.diff)->required();
  path->add_option("--lambda", path_args.lambda)->required();
  path->add_option("--out", path_args.out)->required();

  MergeArgs merge_args;
  auto* merge = app.add_subcommand("merge", "merge task vectors onto a base checkpoint");
  merge->add_option("--base", merge_args.base)->required();
  merge->add_option("--diff", merge_args.diffs, "repeatable")->required();
  merge->add_option("--lambda", merge_args.lambda);
  merge->add_option("--out", merge_args.out)->required();

  StatsArgs stats_args;
  auto* stats = app.add_subcommand("stats", "norms and sparsity of a diff vector");
  stats->add_option("--diff", stats_args.diff)->required();
  stats->add_option("--out", stats_args.out, "also write the stats JSON here");

  DistanceArgs distance_args;
  auto* distance = app.add_subcommand("distance", "parameter-space distance");
  distance->add_option("--base", distance_args.base)->required();
  distance->add_option("--target", distance_args.target)->required();
  distance->add_option("--diff", distance_args.reference,
                       "reference diff for the cosine component");

  BarrierArgs barrier_args;
  auto* barrier = app.add_subcommand("barrier", "loss barrier along the linear path");
  barrier->add_option("--base", barrier_args.base)->required();
  barrier->add_option("--target", barrier_args.target)->required();
  barrier->add_option("--eval-data", barrier_args.eval_data)->required();
  barrier->add_option("--grid", barrier_args.grid, "comma-separated lambdas (default 0..1 by 0.1)");
  barrier->add_option("--out", barrier_args.out, "CSV output path");
  barrier->add_option("--json", barrier_args.json_out, "JSON output path");
  barrier->add_option("--layers", barrier_args.layers, "model layer sizes, e.g. 2,16,1");
  barrier->add_option("--activation", barrier_args.activation);
  barrier->add_option("--loss", barrier_args.loss);

  MatrixArgs matrix_args;
  auto* matrix = app.add_subcommand("matrix", "transfer effectiveness matrix");
  matrix->add_option("--base", matrix_args.bases, "base versions, repeatable")->required();
  matrix->add_option("--diff", matrix_args.diffs, "diff per version, repeatable")->required();
  matrix->add_option("--finetuned", matrix_args.finetuned, "fine-tuned per version, repeatable")
      ->required();
  matrix->add_option("--eval-data", matrix_args.eval_data)->required();
  matrix->add_option("--out", matrix_args.out, "CSV output path");
  matrix->add_option("--json", matrix_args.json_out, "JSON output path");
  matrix->add_option("--layers", matrix_args.layers);
  matrix->add_option("--activation", matrix_args.activation);
  matrix->add_option("--loss", matrix_args.loss);

  auto* toy = app.add_subcommand("toy", "desk-scale model laboratory");
  toy->require_subcommand(1);

  ToyGenArgs gen_args;
  auto* toy_gen = toy->add_subcommand("gen", "generate a synthetic dataset");
  toy_gen->add_option("--kind", gen_args.kind)
      ->check(CLI::IsMember({"teacher-mlp-regression", "gaussian-blob-classification"}));
  toy_gen->add_option("--seed", gen_args.seed);
  toy_gen->add_option("--data-seed", gen_args.data_seed);
  toy_gen->add_option("--n", gen_args.n);
  toy_gen->add_option("--in-dim", gen_args.in_dim);
  toy_gen->add_option("--out-dim", gen_args.out_dim);
  toy_gen->add_option("--classes", gen_args.out_dim, "class count (same field as --out-dim)");
  toy_gen->add_option("--hidden", gen_args.hidden, "teacher hidden width");
  toy_gen->add_option("--separation", gen_args.separation);
  toy_gen->add_option("--noise", gen_args.noise);
  toy_gen->add_option("--shift", gen_args.shift, "comma-separated input shift");
  toy_gen->add_option("--split", gen_args.split)
      ->check(CLI::IsMember({"pretrain", "finetune", "eval"}));
  toy_gen->add_option("--out", gen_args.out)->required();

  ToyTrainArgs train_args;
  auto* toy_train = toy->add_subcommand("train", "SGD training");
  toy_train->add_option("--data", train_args.data)->required();
  toy_train->add_option("--eval-data", train_args.eval_data);
  toy_train->add_option("--init", train_args.init, "start from this checkpoint");
  toy_train->add_option("--layers", train_args.layers, "fresh model layer sizes");
  toy_train->add_option("--activation", train_args.activation);
  toy_train->add_option("--loss", train_args.loss);
  toy_train->add_option("--steps", train_args.steps);
  toy_train->add_option("--batch-size", train_args.batch_size);
  toy_train->add_option("--lr", train_args.lr);
  toy_train->add_option("--eval-every", train_args.eval_every);
  toy_train->add_option("--target-loss", train_args.target_loss);
  toy_train->add_option("--seed", train_args.seed);
  toy_train->add_option("--out", train_args.out)->required();
  toy_train->add_option("--trace", train_args.trace, "trace CSV path");
  toy_train->add_option("--snapshot-steps", train_args.snapshot_steps,
                        "comma-separated steps to snapshot");
  toy_train->add_option("--snapshot-dir", train_args.snapshot_dir);

  ToyEvalArgs eval_args;
  auto* toy_eval = toy->add_subcommand("eval", "evaluate a model checkpoint on a dataset");
  toy_eval->add_option("--model", eval_args.model)->required();
  toy_eval->add_option("--data", eval_args.data)->required();
  toy_eval->add_option("--layers", eval_args.layers);
  toy_eval->add_option("--activation", eval_args.activation);
  toy_eval->add_option("--loss", eval_args.loss);

  auto* pipeline = app.add_subcommand("pipeline", "manifest-driven workflows");
  pipeline->require_subcommand(1);
  PipelineArgs pipeline_args;
  auto* pipeline_run = pipeline->add_subcommand("run", "run a pipeline manifest");
  pipeline_run->add_option("--manifest", pipeline_args.manifest)->required();
  pipeline_run->add_option("--seed", pipeline_args.seed, "override the manifest seed");
  pipeline_run->add_option("--out-dir", pipeline_args.out_dir,
                           "override the manifest output directory");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a container file against the format");
  validate->add_option("path", validate_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (opts.threads > 0) set_worker_count(opts.threads);

  try {
    if (*diff) return cmd_diff(opts, diff_args);
    if (*apply) return cmd_apply(opts, apply_args);
    if (*interp) return cmd_interp(opts, interp_args);
    if (*path) return cmd_path(opts, path_args);
    if (*merge) return cmd_merge(opts, merge_args);
    if (*stats) return cmd_stats(opts, stats_args);
    if (*distance) return cmd_distance(opts, distance_args);
    if (*barrier) return cmd_barrier(opts, barrier_args);
    if (*matrix) return cmd_matrix(opts, matrix_args);
    if (*toy_gen) return cmd_toy_gen(opts, gen_args);
    if (*toy_train) return cmd_toy_train(opts, train_args);
    if (*toy_eval) return cmd_toy_eval(opts, eval_args);
    if (*pipeline_run) return cmd_pipeline_run(opts, pipeline_args);
    if (*validate) return cmd_validate(opts, validate_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_numeric_failure(e.kind()) ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace deltaforge
