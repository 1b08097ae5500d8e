// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deltaforge/connectivity.hpp"
#include "deltaforge/tensor_store.hpp"

namespace deltaforge {

enum class Activation { Tanh, ReLU };
enum class Loss { MSE, SoftmaxCrossEntropy };
enum class Split { Pretrain, Finetune, Eval };

const char* activation_name(Activation a);
bool activation_from_name(const std::string& name, Activation& out);
const char* loss_name(Loss l);
bool loss_from_name(const std::string& name, Loss& out);
const char* split_name(Split s);
bool split_from_name(const std::string& name, Split& out);

// Small MLP: affine -> activation per hidden layer, affine output.
// Parameters are named "layer{k}.weight" ([out, in], row-major) and
// "layer{k}.bias" ([out]).
struct ToyModelSpec {
  std::vector<int64_t> layer_sizes;  // input, hidden..., output
  Activation activation = Activation::Tanh;
  Loss loss = Loss::MSE;
  uint64_t seed = 0;

  size_t layer_count() const { return layer_sizes.size() - 1; }
  void validate() const;
  bool operator==(const ToyModelSpec&) const = default;
};

struct ToyModel {
  ToyModelSpec spec;
  std::vector<std::vector<double>> weights;  // [layer][out * in]
  std::vector<std::vector<double>> biases;   // [layer][out]
};

// Seeded init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer.
ToyModel init_model(const ToyModelSpec& spec);

struct TaskSpec {
  enum class Kind { TeacherMlpRegression, GaussianBlobClassification };

  Kind kind = Kind::TeacherMlpRegression;
  uint64_t seed = 0;                       // pins the task (teacher / cluster layout)
  std::optional<uint64_t> data_seed;       // sample stream; defaults to `seed`
  int64_t n = 0;
  int64_t in_dim = 0;
  int64_t out_dim = 1;                     // regression outputs or class count
  int64_t teacher_hidden = 8;              // regression only
  double noise_std = 0.0;                  // regression target noise
  double separation = 6.0;                 // blob centre spacing, in sigma units
  std::vector<double> input_shift;         // added to every input row
  Split split = Split::Pretrain;

  uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
  std::string to_json_string() const;
  static TaskSpec from_json_string(const std::string& text);
};

const char* task_kind_name(TaskSpec::Kind k);
bool task_kind_from_name(const std::string& name, TaskSpec::Kind& out);

struct Dataset {
  int64_t rows = 0;
  int64_t in_dim = 0;
  int64_t out_dim = 0;
  bool classification = false;
  std::vector<double> inputs;    // rows x in_dim
  std::vector<double> targets;   // rows x out_dim (regression)
  std::vector<int64_t> labels;   // rows (classification)
  Split split = Split::Pretrain;
};

// Deterministic for fixed spec: same (kind, seed, sizes) twice gives
// identical datasets.
Dataset gen_task(const TaskSpec& spec);

// Dataset (de)serialization through the container format.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const CheckpointSource& source);

struct ForwardResult {
  std::vector<double> predictions;  // rows x out_dim (logits for classification)
  double loss = 0.0;
};

ForwardResult forward(const ToyModel& model, const Dataset& batch);

struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
};

// Analytic backprop gradients of the mean loss over the batch.
Gradients backward(const ToyModel& model, const Dataset& batch);

struct TrainConfig {
  int64_t steps = 0;
  int64_t batch_size = 32;
  double learning_rate = 0.05;
  int64_t eval_every = 50;
  std::optional<double> target_loss;  // early-stop threshold on eval loss
  uint64_t seed = 0;

  void validate(int64_t dataset_rows) const;
  std::string to_json_string() const;
  static TrainConfig from_json_string(const std::string& text);
};

struct TraceRecord {
  int64_t step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  std::optional<int64_t> steps_to_target;

  std::string to_csv() const;
};

struct TrainResult {
  ToyModel model;
  TrainTrace trace;
};

// Called after each SGD update; used for snapshotting version grids.
using StepObserver = std::function<void(int64_t step, const ToyModel& model)>;

// Plain SGD with seeded shuffling, deterministic for fixed inputs. Eval
// losses are taken on `eval_data` when given, else on the full training set.
TrainResult train(const ToyModel& model, const Dataset& data, const TrainConfig& config,
                  const Dataset* eval_data = nullptr, const StepObserver& observer = {});

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;  // classification only
};

// Full-dataset mean loss; independent of batch order and worker count.
EvalResult evaluate(const ToyModel& model, const Dataset& dataset);

// Bridges to the checkpoint world. Parameters are serialized F32; the spec
// is carried in user metadata so checkpoints are self-describing.
Checkpoint model_to_checkpoint(const ToyModel& model);
ToyModel checkpoint_to_model(const CheckpointSource& source, const ToyModelSpec& spec);

// Reads a ToyModelSpec back out of checkpoint metadata written by
// model_to_checkpoint. Throws SpecMismatch when the keys are absent.
ToyModelSpec spec_from_metadata(const CheckpointSource& source);

// Evaluator over checkpoints for the connectivity module.
Evaluator make_toy_evaluator(const ToyModelSpec& spec, Dataset dataset);

}  // namespace deltaforge
