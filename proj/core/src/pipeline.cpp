// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "deltaforge/rng.hpp"

namespace deltaforge {

namespace {

using nlohmann::json;

constexpr uint64_t kStreamTrainSeeds = 0x70697065;

std::string double_text(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoFailure, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json task_to_json(const TaskSpec& t) { return json::parse(t.to_json_string()); }
json config_to_json(const TrainConfig& c) { return json::parse(c.to_json_string()); }

}  // namespace

Checkpoint copy_to_memory(const CheckpointSource& source) {
  Checkpoint out;
  for (const auto& name : source.names()) out.add(name, source.load(name));
  for (const auto& [k, v] : source.metadata()) out.set_metadata(k, v);
  out.set_id(source.id());
  return out;
}

namespace {

// Everything one strategy run needs, resolved once up front.
struct RunContext {
  const PipelineManifest* manifest = nullptr;
  std::filesystem::path out;
  std::vector<CheckpointHandle> versions;
  ToyModelSpec model_spec;
  Dataset ft_data;
  bool has_ft_data = false;
  Dataset eval_data;
  Evaluator evaluator;
  uint64_t train_seed_base = 0;

  uint64_t train_seed(size_t version_index) const {
    return derive_seed(train_seed_base, version_index);
  }
  std::string vtag(size_t i) const { return "v" + std::to_string(i + 1); }
  std::filesystem::path merged_path(size_t i) const {
    return out / ("merged_" + vtag(i) + ".st");
  }
  std::filesystem::path final_path(size_t i) const {
    return out / ("final_" + vtag(i) + ".st");
  }
  std::filesystem::path baseline_path(size_t i) const {
    return out / ("baseline_ft_" + vtag(i) + ".st");
  }
  std::filesystem::path delta_path(size_t i) const {
    return out / ("delta_" + vtag(i) + ".st");
  }
};

Dataset resolve_dataset(const std::optional<TaskSpec>& spec,
                        const std::optional<std::string>& path, const char* what) {
  if (path) {
    const CheckpointHandle handle = open_checkpoint(*path);
    return load_dataset(handle);
  }
  if (spec) return gen_task(*spec);
  raise(ErrorKind::InvalidArgument,
        std::string(what) + " needs either an inline task spec or a dataset path");
}

RunContext make_context(const PipelineManifest& manifest, Strategy expected) {
  if (manifest.strategy != expected)
    raise(ErrorKind::InvalidArgument, "manifest strategy is not " +
                                          std::string(strategy_name(expected)));
  if (manifest.versions.empty())
    raise(ErrorKind::InvalidArgument, "manifest lists no versions");
  if ((expected == Strategy::DirectRecycle || expected == Strategy::IterativeRecycle) &&
      manifest.versions.size() < 2)
    raise(ErrorKind::InvalidArgument, "recycling needs at least two versions");
  if (manifest.output_dir.empty())
    raise(ErrorKind::InvalidArgument, "manifest has no output_dir");

  RunContext ctx;
  ctx.manifest = &manifest;
  ctx.out = manifest.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(ctx.out, ec);
  if (ec) raise(ErrorKind::IoFailure, "cannot create " + ctx.out.string());

  for (const auto& path : manifest.versions) ctx.versions.push_back(open_checkpoint(path));

  ctx.model_spec =
      manifest.model ? *manifest.model : spec_from_metadata(ctx.versions.front());

  ctx.eval_data = resolve_dataset(manifest.evaluator.dataset, manifest.evaluator.dataset_path,
                                  "the evaluator");
  ctx.evaluator = make_toy_evaluator(ctx.model_spec, ctx.eval_data);

  const bool needs_finetuner = expected != Strategy::TransferOnly;
  if (needs_finetuner && manifest.finetuner.type == FinetunerSpec::Type::Toylab) {
    ctx.ft_data = resolve_dataset(manifest.finetuner.dataset, manifest.finetuner.dataset_path,
                                  "the fine-tuner");
    ctx.has_ft_data = true;
  }

  ctx.train_seed_base =
      derive_seed(splitmix64(manifest.seed) ^ manifest.finetuner.train.seed, kStreamTrainSeeds);
  return ctx;
}

struct FinetuneOutcome {
  Checkpoint checkpoint;
  double metric = 0.0;
  std::optional<int64_t> steps_to_target;
  json provenance_step;
};

// Runs one fine-tuning step from `init` and persists checkpoint + trace.
FinetuneOutcome finetune_step(const RunContext& ctx, const CheckpointSource& init,
                              const std::string& init_ref,
                              const std::filesystem::path& out_path, uint64_t seed,
                              const std::string& trace_name) {
  const FinetunerSpec& ft = ctx.manifest->finetuner;
  FinetuneOutcome outcome;

  if (ft.type == FinetunerSpec::Type::Toylab) {
    if (!ctx.has_ft_data)
      raise(ErrorKind::InvalidArgument, "toylab fine-tuner has no dataset");
    TrainConfig cfg = ft.train;
    cfg.seed = seed;
    const ToyModel start = checkpoint_to_model(init, ctx.model_spec);
    TrainResult trained = train(start, ctx.ft_data, cfg, &ctx.eval_data);
    outcome.checkpoint = model_to_checkpoint(trained.model);
    outcome.checkpoint.set_id(out_path.filename().string());
    save_checkpoint(outcome.checkpoint, out_path);
    write_text_atomic(ctx.out / (trace_name + ".csv"), trained.trace.to_csv());
    outcome.steps_to_target = trained.trace.steps_to_target;
    outcome.provenance_step = {{"op", "train"},
                               {"init", init_ref},
                               {"dataset", ft.dataset_path
                                               ? json(*ft.dataset_path)
                                               : task_to_json(ft.dataset.value())},
                               {"config", config_to_json(cfg)},
                               {"out", out_path.filename().string()}};
  } else {
    if (ft.command.empty())
      raise(ErrorKind::InvalidArgument, "command fine-tuner has no command");
    // Contract: <command> <input ckpt> <dataset ref> <output ckpt>, exit 0.
    const std::filesystem::path in_path = ctx.out / ("ft_input_" + out_path.filename().string());
    save_checkpoint(copy_to_memory(init), in_path);
    const std::string cmdline = ft.command + " \"" + in_path.string() + "\" \"" +
                                ft.dataset_ref + "\" \"" + out_path.string() + "\"";
    const int rc = std::system(cmdline.c_str());
    if (rc != 0)
      raise(ErrorKind::FinetunerFailed,
            "fine-tuner command exited with status " + std::to_string(rc));
    const CheckpointHandle produced = open_checkpoint(out_path);
    outcome.checkpoint = copy_to_memory(produced);
    outcome.provenance_step = {{"op", "finetune_command"},
                               {"command", ft.command},
                               {"init", init_ref},
                               {"dataset_ref", ft.dataset_ref},
                               {"out", out_path.filename().string()}};
  }
  outcome.metric = ctx.evaluator(outcome.checkpoint);
  return outcome;
}

// Applies a diff at scale 1 with the default skip policy and persists both
// the merged checkpoint and its transfer report.
ApplyResult merge_step(const RunContext& ctx, size_t target_index, const DiffVector& diff) {
  const AlignmentPlan plan = align(diff.metas(), ctx.versions[target_index].metas(),
                                   MismatchPolicy::SkipMismatch);
  ApplyResult result = apply_diff(ctx.versions[target_index], diff, 1.0, plan);
  result.checkpoint.set_id(ctx.merged_path(target_index).filename().string());
  result.report.output_id = result.checkpoint.id();
  save_checkpoint(result.checkpoint, ctx.merged_path(target_index));
  write_text_atomic(ctx.out / ("transfer_report_" + ctx.vtag(target_index) + ".json"),
                    result.report.to_json_string());
  return result;
}

void finalize_run(const RunContext& ctx, PipelineReport& report) {
  write_text_atomic(ctx.out / "manifest.json", ctx.manifest->to_json_string());
  write_text_atomic(ctx.out / "report.json", report.to_json_string());
  write_text_atomic(ctx.out / "report.csv", report.to_table_csv());
}

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::TransferOnly: return "transfer-only";
    case Strategy::TransferThenFinetune: return "transfer-then-finetune";
    case Strategy::DirectRecycle: return "direct-recycle";
    case Strategy::IterativeRecycle: return "iterative-recycle";
  }
  return "?";
}

bool strategy_from_name(const std::string& name, Strategy& out) {
  if (name == "transfer-only") { out = Strategy::TransferOnly; return true; }
  if (name == "transfer-then-finetune") { out = Strategy::TransferThenFinetune; return true; }
  if (name == "direct-recycle") { out = Strategy::DirectRecycle; return true; }
  if (name == "iterative-recycle") { out = Strategy::IterativeRecycle; return true; }
  return false;
}

double improvement(double after, double before) {
  if (!std::isfinite(after) || !std::isfinite(before))
    raise(ErrorKind::NonFiniteMetric, "improvement needs finite metrics");
  return after - before;
}

std::string format_improvement(double value) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%+.1f", value);
  std::string out(buf);
  if (out == "-0.0") out = "+0.0";
  return out;
}

// ---------------------------------------------------------------------------
// manifest (de)serialization

std::string PipelineManifest::to_json_string() const {
  json j;
  j["versions"] = versions;
  j["strategy"] = strategy_name(strategy);
  if (source) j["source"] = *source;
  if (!finetuned.empty()) {
    json f = json::object();
    for (const auto& [idx, path] : finetuned) f[std::to_string(idx)] = path;
    j["finetuned"] = std::move(f);
  }
  if (diff_path) j["diff"] = *diff_path;
  if (model) {
    json m;
    m["layer_sizes"] = model->layer_sizes;
    m["activation"] = activation_name(model->activation);
    m["loss"] = loss_name(model->loss);
    m["seed"] = model->seed;
    j["model"] = std::move(m);
  }
  json ft;
  ft["type"] = finetuner.type == FinetunerSpec::Type::Toylab ? "toylab" : "command";
  if (finetuner.dataset) ft["dataset"] = task_to_json(*finetuner.dataset);
  if (finetuner.dataset_path) ft["dataset_path"] = *finetuner.dataset_path;
  ft["train"] = config_to_json(finetuner.train);
  if (!finetuner.command.empty()) ft["command"] = finetuner.command;
  if (!finetuner.dataset_ref.empty()) ft["dataset_ref"] = finetuner.dataset_ref;
  j["finetuner"] = std::move(ft);
  json ev = json::object();
  if (evaluator.dataset) ev["dataset"] = task_to_json(*evaluator.dataset);
  if (evaluator.dataset_path) ev["dataset_path"] = *evaluator.dataset_path;
  j["evaluator"] = std::move(ev);
  j["output_dir"] = output_dir;
  j["seed"] = seed;
  j["baseline"] = baseline;
  return j.dump(2);
}

PipelineManifest PipelineManifest::from_json_string(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorKind::InvalidArgument, "manifest is not a valid object");

  PipelineManifest m;
  if (!j.contains("versions") || !j["versions"].is_array())
    raise(ErrorKind::InvalidArgument, "manifest needs a versions list");
  for (const auto& v : j["versions"]) m.versions.push_back(v.get<std::string>());

  if (j.contains("strategy") &&
      !strategy_from_name(j["strategy"].get<std::string>(), m.strategy))
    raise(ErrorKind::InvalidArgument,
          "unknown strategy \"" + j["strategy"].get<std::string>() + "\"");
  if (j.contains("source")) m.source = j["source"].get<size_t>();
  if (j.contains("finetuned")) {
    for (const auto& [key, value] : j["finetuned"].items())
      m.finetuned[static_cast<size_t>(std::strtoull(key.c_str(), nullptr, 10))] =
          value.get<std::string>();
  }
  if (j.contains("diff")) m.diff_path = j["diff"].get<std::string>();
  if (j.contains("model")) {
    const auto& jm = j["model"];
    ToyModelSpec spec;
    spec.layer_sizes = jm["layer_sizes"].get<std::vector<int64_t>>();
    if (jm.contains("activation") &&
        !activation_from_name(jm["activation"].get<std::string>(), spec.activation))
      raise(ErrorKind::InvalidArgument, "unknown activation in manifest");
    if (jm.contains("loss") && !loss_from_name(jm["loss"].get<std::string>(), spec.loss))
      raise(ErrorKind::InvalidArgument, "unknown loss in manifest");
    if (jm.contains("seed")) spec.seed = jm["seed"].get<uint64_t>();
    m.model = spec;
  }
  if (j.contains("finetuner")) {
    const auto& jf = j["finetuner"];
    if (jf.contains("type")) {
      const std::string t = jf["type"].get<std::string>();
      if (t == "toylab") m.finetuner.type = FinetunerSpec::Type::Toylab;
      else if (t == "command") m.finetuner.type = FinetunerSpec::Type::Command;
      else raise(ErrorKind::InvalidArgument, "unknown finetuner type \"" + t + "\"");
    }
    if (jf.contains("dataset")) m.finetuner.dataset = TaskSpec::from_json_string(jf["dataset"].dump());
    if (jf.contains("dataset_path")) m.finetuner.dataset_path = jf["dataset_path"].get<std::string>();
    if (jf.contains("train")) m.finetuner.train = TrainConfig::from_json_string(jf["train"].dump());
    if (jf.contains("command")) m.finetuner.command = jf["command"].get<std::string>();
    if (jf.contains("dataset_ref")) m.finetuner.dataset_ref = jf["dataset_ref"].get<std::string>();
  }
  if (j.contains("evaluator")) {
    const auto& je = j["evaluator"];
    if (je.contains("dataset")) m.evaluator.dataset = TaskSpec::from_json_string(je["dataset"].dump());
    if (je.contains("dataset_path")) m.evaluator.dataset_path = je["dataset_path"].get<std::string>();
  }
  if (j.contains("output_dir")) m.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("seed")) m.seed = j["seed"].get<uint64_t>();
  if (j.contains("baseline")) m.baseline = j["baseline"].get<bool>();
  return m;
}

PipelineManifest load_manifest(const std::filesystem::path& path) {
  return PipelineManifest::from_json_string(read_text_file(path));
}

// ---------------------------------------------------------------------------
// report (de)serialization

namespace {

json row_to_json(const VersionRecord& r) {
  json j;
  j["version"] = r.version_id;
  j["path"] = r.version_path;
  j["is_source"] = r.is_source;
  j["base_metric"] = r.base_metric;
  auto put_opt = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put_opt("merged_metric", r.merged_metric);
  put_opt("post_finetune_metric", r.post_finetune_metric);
  put_opt("baseline_ft_metric", r.baseline_ft_metric);
  put_opt("finetuned_metric", r.finetuned_metric);
  if (r.merged_metric) j["merged_improvement"] = improvement(*r.merged_metric, r.base_metric);
  if (r.post_finetune_metric)
    j["post_finetune_improvement"] = improvement(*r.post_finetune_metric, r.base_metric);
  if (r.baseline_ft_metric)
    j["baseline_ft_improvement"] = improvement(*r.baseline_ft_metric, r.base_metric);
  if (r.steps_to_target) j["steps_to_target"] = *r.steps_to_target;
  if (r.steps_to_target_baseline)
    j["steps_to_target_baseline"] = *r.steps_to_target_baseline;
  if (r.diff_norm) j["diff_norm"] = *r.diff_norm;
  if (!r.provenance_json.empty()) j["provenance"] = json::parse(r.provenance_json);
  return j;
}

VersionRecord row_from_json(const json& j) {
  VersionRecord r;
  r.version_id = j.at("version").get<std::string>();
  r.version_path = j.value("path", std::string());
  r.is_source = j.value("is_source", false);
  r.base_metric = j.at("base_metric").get<double>();
  auto get_opt = [&](const char* key, std::optional<double>& v) {
    if (j.contains(key)) v = j[key].get<double>();
  };
  get_opt("merged_metric", r.merged_metric);
  get_opt("post_finetune_metric", r.post_finetune_metric);
  get_opt("baseline_ft_metric", r.baseline_ft_metric);
  get_opt("finetuned_metric", r.finetuned_metric);
  if (j.contains("steps_to_target")) r.steps_to_target = j["steps_to_target"].get<int64_t>();
  if (j.contains("steps_to_target_baseline"))
    r.steps_to_target_baseline = j["steps_to_target_baseline"].get<int64_t>();
  get_opt("diff_norm", r.diff_norm);
  if (j.contains("provenance")) r.provenance_json = j["provenance"].dump();
  return r;
}

}  // namespace

std::string PipelineReport::to_json_string() const {
  json j;
  j["strategy"] = strategy_name(strategy);
  j["seed"] = seed;
  j["metric"] = metric_kind;
  json rows_json = json::array();
  for (const auto& r : rows) rows_json.push_back(row_to_json(r));
  j["rows"] = std::move(rows_json);
  return j.dump(2);
}

PipelineReport PipelineReport::from_json_string(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorKind::InvalidArgument, "report is not a valid object");
  PipelineReport r;
  if (j.contains("strategy") &&
      !strategy_from_name(j["strategy"].get<std::string>(), r.strategy))
    raise(ErrorKind::InvalidArgument, "unknown strategy in report");
  r.seed = j.value("seed", 0ull);
  r.metric_kind = j.value("metric", std::string("eval_loss"));
  for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
  return r;
}

std::string PipelineReport::to_table_csv() const {
  auto cell_opt = [](const std::optional<double>& v) {
    return v ? double_text(*v) : std::string();
  };
  auto improvement_cell = [](const std::optional<double>& v, double base) {
    return v ? format_improvement(improvement(*v, base)) : std::string();
  };

  std::string out = "row";
  for (const auto& r : rows) out += "," + r.version_id;
  out += "\n";

  auto emit = [&](const std::string& label, auto getter) {
    std::vector<std::string> cells;
    bool any = false;
    for (const auto& r : rows) {
      std::string c = getter(r);
      if (!c.empty()) any = true;
      cells.push_back(std::move(c));
    }
    if (!any) return;
    out += label;
    for (const auto& c : cells) out += "," + c;
    out += "\n";
  };

  emit("base", [&](const VersionRecord& r) { return double_text(r.base_metric); });
  emit("merged", [&](const VersionRecord& r) { return cell_opt(r.merged_metric); });
  emit("merged_improvement",
       [&](const VersionRecord& r) { return improvement_cell(r.merged_metric, r.base_metric); });
  emit("final", [&](const VersionRecord& r) { return cell_opt(r.post_finetune_metric); });
  emit("final_improvement", [&](const VersionRecord& r) {
    return improvement_cell(r.post_finetune_metric, r.base_metric);
  });
  emit("baseline_ft", [&](const VersionRecord& r) { return cell_opt(r.baseline_ft_metric); });
  emit("baseline_ft_improvement", [&](const VersionRecord& r) {
    return improvement_cell(r.baseline_ft_metric, r.base_metric);
  });
  emit("finetuned", [&](const VersionRecord& r) { return cell_opt(r.finetuned_metric); });
  emit("steps_to_target", [&](const VersionRecord& r) {
    return r.steps_to_target ? std::to_string(*r.steps_to_target) : std::string();
  });
  emit("steps_to_target_baseline", [&](const VersionRecord& r) {
    return r.steps_to_target_baseline ? std::to_string(*r.steps_to_target_baseline)
                                      : std::string();
  });
  return out;
}

std::map<std::string, std::vector<std::string>> parse_table_csv(const std::string& text) {
  std::map<std::string, std::vector<std::string>> table;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;

    std::vector<std::string> cells;
    size_t cell_start = 0;
    for (;;) {
      const size_t comma = line.find(',', cell_start);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(cell_start));
        break;
      }
      cells.push_back(line.substr(cell_start, comma - cell_start));
      cell_start = comma + 1;
    }
    std::string label = cells.front();
    cells.erase(cells.begin());
    table[label] = std::move(cells);
  }
  return table;
}

// ---------------------------------------------------------------------------
// strategies

namespace {

struct DiffSource {
  DiffVector diff;
  double norm = 0.0;
  std::string file_ref;  // path recorded in provenance
  json provenance;       // steps that produced the diff
};

// Resolves the diff vector for transfer strategies: either a precomputed
// file or (finetuned[source] - versions[source]) persisted into the run dir.
DiffSource resolve_source_diff(const RunContext& ctx, size_t source_index) {
  const PipelineManifest& m = *ctx.manifest;
  DiffSource out;
  if (m.diff_path) {
    const CheckpointHandle handle = open_checkpoint(*m.diff_path);
    out.diff = load_diff(handle);
    out.file_ref = *m.diff_path;
    out.provenance = json::array({{{"op", "load_diff"}, {"path", *m.diff_path}}});
  } else {
    auto it = m.finetuned.find(source_index);
    if (it == m.finetuned.end())
      raise(ErrorKind::MissingDiffSource,
            "source version " + ctx.vtag(source_index) +
                " has no fine-tuned counterpart and no precomputed diff was given");
    const CheckpointHandle ft = open_checkpoint(it->second);
    out.diff = compute_diff(ft, ctx.versions[source_index]);
    save_diff(out.diff, ctx.delta_path(source_index));
    out.file_ref = ctx.delta_path(source_index).filename().string();
    out.provenance = json::array({{{"op", "compute_diff"},
                                   {"finetuned", it->second},
                                   {"base", m.versions[source_index]},
                                   {"out", out.file_ref}}});
  }
  out.norm = diff_stats(out.diff).global_l2;
  return out;
}

PipelineReport make_report(const RunContext& ctx) {
  PipelineReport report;
  report.strategy = ctx.manifest->strategy;
  report.seed = ctx.manifest->seed;
  report.rows.resize(ctx.versions.size());
  for (size_t i = 0; i < ctx.versions.size(); ++i) {
    report.rows[i].version_id = ctx.vtag(i);
    report.rows[i].version_path = ctx.manifest->versions[i];
    report.rows[i].base_metric = ctx.evaluator(ctx.versions[i]);
  }
  return report;
}

size_t required_source(const RunContext& ctx) {
  const PipelineManifest& m = *ctx.manifest;
  size_t s = 0;
  if (m.source) {
    s = *m.source;
  } else if (m.diff_path) {
    s = ctx.versions.size();  // sentinel: no source version row
  } else if (m.finetuned.size() == 1) {
    s = m.finetuned.begin()->first;
  } else {
    raise(ErrorKind::MissingDiffSource,
          "manifest does not designate a diff source (set source, finetuned or diff)");
  }
  if (!m.diff_path && s >= ctx.versions.size())
    raise(ErrorKind::InvalidArgument, "source index is out of range");
  return s;
}

PipelineReport transfer_core(const RunContext& ctx, bool then_finetune) {
  const PipelineManifest& m = *ctx.manifest;
  const size_t s = required_source(ctx);
  const bool has_source_row = s < ctx.versions.size();
  const DiffSource src = resolve_source_diff(ctx, has_source_row ? s : 0);

  PipelineReport report = make_report(ctx);

  if (has_source_row) {
    VersionRecord& row = report.rows[s];
    row.is_source = true;
    if (auto it = m.finetuned.find(s); it != m.finetuned.end()) {
      const CheckpointHandle ft = open_checkpoint(it->second);
      row.finetuned_metric = ctx.evaluator(ft);
    }
    row.provenance_json = src.provenance.dump();
  }

  for (size_t i = 0; i < ctx.versions.size(); ++i) {
    if (has_source_row && i == s) continue;
    VersionRecord& row = report.rows[i];
    row.diff_norm = src.norm;

    const ApplyResult merged = merge_step(ctx, i, src.diff);
    row.merged_metric = ctx.evaluator(merged.checkpoint);

    json chain = src.provenance;
    chain.push_back({{"op", "apply_diff"},
                     {"target", m.versions[i]},
                     {"diff", src.file_ref},
                     {"scale", 1.0},
                     {"out", ctx.merged_path(i).filename().string()}});

    if (then_finetune) {
      const FinetuneOutcome ft =
          finetune_step(ctx, merged.checkpoint, ctx.merged_path(i).filename().string(),
                        ctx.final_path(i), ctx.train_seed(i), "trace_final_" + ctx.vtag(i));
      row.post_finetune_metric = ft.metric;
      row.steps_to_target = ft.steps_to_target;
      chain.push_back(ft.provenance_step);

      if (m.baseline) {
        const FinetuneOutcome base_ft =
            finetune_step(ctx, ctx.versions[i], m.versions[i], ctx.baseline_path(i),
                          ctx.train_seed(i), "trace_baseline_" + ctx.vtag(i));
        row.baseline_ft_metric = base_ft.metric;
        row.steps_to_target_baseline = base_ft.steps_to_target;
      }
    }
    row.provenance_json = chain.dump();
  }
  return report;
}

PipelineReport recycle_core(const RunContext& ctx, bool iterative) {
  const PipelineManifest& m = *ctx.manifest;
  const size_t n = ctx.versions.size();
  PipelineReport report = make_report(ctx);

  // Plain fine-tunes; index 0 doubles as the first pipeline output.
  std::vector<std::optional<Checkpoint>> plain_ft(n);
  std::vector<std::optional<FinetuneOutcome>> plain_outcome(n);
  auto ensure_plain_ft = [&](size_t j) -> const Checkpoint& {
    if (!plain_ft[j]) {
      const bool is_first = j == 0;
      FinetuneOutcome out = finetune_step(
          ctx, ctx.versions[j], m.versions[j],
          is_first ? ctx.final_path(j) : ctx.baseline_path(j), ctx.train_seed(j),
          (is_first ? "trace_final_" : "trace_baseline_") + ctx.vtag(j));
      plain_ft[j] = out.checkpoint;
      plain_outcome[j] = std::move(out);
    }
    return *plain_ft[j];
  };

  // Version 1 is always fine-tuned directly.
  ensure_plain_ft(0);
  report.rows[0].post_finetune_metric = plain_outcome[0]->metric;
  report.rows[0].baseline_ft_metric = plain_outcome[0]->metric;
  report.rows[0].steps_to_target = plain_outcome[0]->steps_to_target;
  report.rows[0].steps_to_target_baseline = plain_outcome[0]->steps_to_target;
  {
    json chain = json::array();
    chain.push_back(plain_outcome[0]->provenance_step);
    report.rows[0].provenance_json = chain.dump();
  }

  Checkpoint previous_final = *plain_ft[0];  // M*_{i-1} for the iterative scheme
  std::string previous_final_ref = ctx.final_path(0).filename().string();

  for (size_t i = 1; i < n; ++i) {
    VersionRecord& row = report.rows[i];
    json chain = json::array();

    // Diff carried into version i.
    DiffVector diff;
    std::string diff_ref;
    if (iterative) {
      diff = compute_diff(previous_final, ctx.versions[i - 1]);
      save_diff(diff, ctx.delta_path(i - 1));
      diff_ref = ctx.delta_path(i - 1).filename().string();
      chain.push_back({{"op", "compute_diff"},
                       {"finetuned", previous_final_ref},
                       {"base", m.versions[i - 1]},
                       {"out", diff_ref}});
    } else {
      const size_t src = m.source ? *m.source : i - 1;
      if (src >= i)
        raise(ErrorKind::InvalidArgument,
              "direct recycling must draw its diff from an earlier version");
      const Checkpoint& src_ft = ensure_plain_ft(src);
      diff = compute_diff(src_ft, ctx.versions[src]);
      save_diff(diff, ctx.delta_path(src));
      diff_ref = ctx.delta_path(src).filename().string();
      chain.push_back(
          {{"op", "compute_diff"},
           {"finetuned", src == 0 ? ctx.final_path(0).filename().string()
                                  : ctx.baseline_path(src).filename().string()},
           {"base", m.versions[src]},
           {"out", diff_ref}});
    }
    row.diff_norm = diff_stats(diff).global_l2;

    const ApplyResult merged = merge_step(ctx, i, diff);
    row.merged_metric = ctx.evaluator(merged.checkpoint);
    chain.push_back({{"op", "apply_diff"},
                     {"target", m.versions[i]},
                     {"diff", diff_ref},
                     {"scale", 1.0},
                     {"out", ctx.merged_path(i).filename().string()}});

    FinetuneOutcome ft =
        finetune_step(ctx, merged.checkpoint, ctx.merged_path(i).filename().string(),
                      ctx.final_path(i), ctx.train_seed(i), "trace_final_" + ctx.vtag(i));
    row.post_finetune_metric = ft.metric;
    row.steps_to_target = ft.steps_to_target;
    chain.push_back(ft.provenance_step);
    row.provenance_json = chain.dump();

    if (m.baseline) {
      ensure_plain_ft(i);
      row.baseline_ft_metric = plain_outcome[i]->metric;
      row.steps_to_target_baseline = plain_outcome[i]->steps_to_target;
    }

    previous_final = std::move(ft.checkpoint);
    previous_final_ref = ctx.final_path(i).filename().string();
  }
  return report;
}

}  // namespace

PipelineReport run_transfer_only(const PipelineManifest& manifest) {
  RunContext ctx = make_context(manifest, Strategy::TransferOnly);
  PipelineReport report = transfer_core(ctx, false);
  finalize_run(ctx, report);
  return report;
}

PipelineReport run_transfer_then_finetune(const PipelineManifest& manifest) {
  RunContext ctx = make_context(manifest, Strategy::TransferThenFinetune);
  PipelineReport report = transfer_core(ctx, true);
  finalize_run(ctx, report);
  return report;
}

PipelineReport run_direct_recycle(const PipelineManifest& manifest) {
  RunContext ctx = make_context(manifest, Strategy::DirectRecycle);
  PipelineReport report = recycle_core(ctx, false);
  finalize_run(ctx, report);
  return report;
}

PipelineReport run_iterative_recycle(const PipelineManifest& manifest) {
  RunContext ctx = make_context(manifest, Strategy::IterativeRecycle);
  PipelineReport report = recycle_core(ctx, true);
  finalize_run(ctx, report);
  return report;
}

PipelineReport run_pipeline(const PipelineManifest& manifest) {
  switch (manifest.strategy) {
    case Strategy::TransferOnly: return run_transfer_only(manifest);
    case Strategy::TransferThenFinetune: return run_transfer_then_finetune(manifest);
    case Strategy::DirectRecycle: return run_direct_recycle(manifest);
    case Strategy::IterativeRecycle: return run_iterative_recycle(manifest);
  }
  raise(ErrorKind::InvalidArgument, "unknown strategy");
}

}  // namespace deltaforge
