// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deltaforge/toylab.hpp"

namespace deltaforge {

enum class Strategy { TransferOnly, TransferThenFinetune, DirectRecycle, IterativeRecycle };

const char* strategy_name(Strategy s);
bool strategy_from_name(const std::string& name, Strategy& out);

// Materializes any checkpoint source (file handle or otherwise) in memory.
Checkpoint copy_to_memory(const CheckpointSource& source);

// Fine-tuning step: the built-in trainer, or an external command invoked as
//   <command> <input checkpoint> <dataset reference> <output checkpoint>
// which must exit 0 and write the output checkpoint.
struct FinetunerSpec {
  enum class Type { Toylab, Command };
  Type type = Type::Toylab;
  std::optional<TaskSpec> dataset;
  std::optional<std::string> dataset_path;
  TrainConfig train;
  std::string command;      // Command type
  std::string dataset_ref;  // opaque second argument for Command type
};

struct EvaluatorSpec {
  std::optional<TaskSpec> dataset;
  std::optional<std::string> dataset_path;
};

// Declarative description of one run: ordered base versions, how to
// fine-tune, how to evaluate, and which transfer strategy to follow.
struct PipelineManifest {
  std::vector<std::string> versions;  // base checkpoint paths, oldest first
  Strategy strategy = Strategy::TransferOnly;
  std::optional<size_t> source;                 // version index carrying the diff
  std::map<size_t, std::string> finetuned;      // existing fine-tuned counterparts
  std::optional<std::string> diff_path;         // precomputed diff vector
  std::optional<ToyModelSpec> model;            // else read from version metadata
  FinetunerSpec finetuner;
  EvaluatorSpec evaluator;
  std::string output_dir;
  uint64_t seed = 0;
  bool baseline = true;  // also fine-tune each plain base for comparison

  std::string to_json_string() const;
  static PipelineManifest from_json_string(const std::string& text);
};

PipelineManifest load_manifest(const std::filesystem::path& path);

struct VersionRecord {
  std::string version_id;  // "v1", "v2", ...
  std::string version_path;
  bool is_source = false;
  double base_metric = 0.0;
  std::optional<double> merged_metric;
  std::optional<double> post_finetune_metric;
  std::optional<double> baseline_ft_metric;
  std::optional<double> finetuned_metric;  // pre-existing counterpart (source row)
  std::optional<int64_t> steps_to_target;
  std::optional<int64_t> steps_to_target_baseline;
  std::optional<double> diff_norm;  // global L2 of the diff applied to this version
  std::string provenance_json;      // chain reconstructing this version's outputs
};

struct PipelineReport {
  Strategy strategy = Strategy::TransferOnly;
  uint64_t seed = 0;
  std::string metric_kind = "eval_loss";
  std::vector<VersionRecord> rows;

  std::string to_json_string() const;
  static PipelineReport from_json_string(const std::string& text);

  // Version-columns table: base / merged / final / baseline rows with
  // improvement rows (signed, one decimal) beside the raw metrics.
  std::string to_table_csv() const;
};

// Raw cells of a table emitted by to_table_csv, keyed by row label.
std::map<std::string, std::vector<std::string>> parse_table_csv(const std::string& text);

// after - before. Both metrics must be finite.
double improvement(double after, double before);

// Signed, one decimal: +46.9, -0.1, +0.0.
std::string format_improvement(double value);

PipelineReport run_transfer_only(const PipelineManifest& manifest);
PipelineReport run_transfer_then_finetune(const PipelineManifest& manifest);
PipelineReport run_direct_recycle(const PipelineManifest& manifest);
PipelineReport run_iterative_recycle(const PipelineManifest& manifest);

// Dispatches on manifest.strategy. Writes checkpoints, diffs, traces, the
// resolved manifest, report.json and report.csv under manifest.output_dir.
PipelineReport run_pipeline(const PipelineManifest& manifest);

}  // namespace deltaforge
