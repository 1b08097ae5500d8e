// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/toylab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "deltaforge/parallel.hpp"
#include "deltaforge/rng.hpp"

namespace deltaforge {

namespace {

using nlohmann::json;

constexpr uint64_t kStreamInit = 0x696e6974;      // model init
constexpr uint64_t kStreamTeacher = 0x74656163;   // task teacher / cluster layout
constexpr uint64_t kStreamData = 0x64617461;      // sample stream
constexpr uint64_t kStreamShuffle = 0x73687566;   // SGD shuffling

constexpr size_t kEvalChunk = 64;

double relu(double z) { return z > 0.0 ? z : 0.0; }

}  // namespace

const char* activation_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

bool activation_from_name(const std::string& name, Activation& out) {
  if (name == "tanh") { out = Activation::Tanh; return true; }
  if (name == "relu") { out = Activation::ReLU; return true; }
  return false;
}

const char* loss_name(Loss l) {
  return l == Loss::MSE ? "mse" : "softmax-cross-entropy";
}

bool loss_from_name(const std::string& name, Loss& out) {
  if (name == "mse") { out = Loss::MSE; return true; }
  if (name == "softmax-cross-entropy" || name == "xent") {
    out = Loss::SoftmaxCrossEntropy;
    return true;
  }
  return false;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Pretrain: return "pretrain";
    case Split::Finetune: return "finetune";
    case Split::Eval: return "eval";
  }
  return "?";
}

bool split_from_name(const std::string& name, Split& out) {
  if (name == "pretrain") { out = Split::Pretrain; return true; }
  if (name == "finetune") { out = Split::Finetune; return true; }
  if (name == "eval") { out = Split::Eval; return true; }
  return false;
}

const char* task_kind_name(TaskSpec::Kind k) {
  return k == TaskSpec::Kind::TeacherMlpRegression ? "teacher-mlp-regression"
                                                   : "gaussian-blob-classification";
}

bool task_kind_from_name(const std::string& name, TaskSpec::Kind& out) {
  if (name == "teacher-mlp-regression") {
    out = TaskSpec::Kind::TeacherMlpRegression;
    return true;
  }
  if (name == "gaussian-blob-classification") {
    out = TaskSpec::Kind::GaussianBlobClassification;
    return true;
  }
  return false;
}

void ToyModelSpec::validate() const {
  if (layer_sizes.size() < 2)
    raise(ErrorKind::InvalidSize, "a model needs at least input and output sizes");
  for (int64_t s : layer_sizes)
    if (s <= 0) raise(ErrorKind::InvalidSize, "layer sizes must be positive");
}

ToyModel init_model(const ToyModelSpec& spec) {
  spec.validate();
  ToyModel model;
  model.spec = spec;
  Rng rng(derive_seed(spec.seed, kStreamInit));
  for (size_t k = 0; k < spec.layer_count(); ++k) {
    const int64_t fan_in = spec.layer_sizes[k];
    const int64_t fan_out = spec.layer_sizes[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<size_t>(fan_out * fan_in));
    std::vector<double> b(static_cast<size_t>(fan_out));
    for (double& x : w) x = rng.uniform(-bound, bound);
    for (double& x : b) x = rng.uniform(-bound, bound);
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

// ---------------------------------------------------------------------------
// tasks

namespace {

void check_task(const TaskSpec& t) {
  if (t.n <= 0) raise(ErrorKind::InvalidSize, "dataset size must be positive");
  if (t.in_dim <= 0) raise(ErrorKind::InvalidSize, "input dimension must be positive");
  if (t.out_dim <= 0) raise(ErrorKind::InvalidSize, "output dimension must be positive");
  if (t.kind == TaskSpec::Kind::TeacherMlpRegression && t.teacher_hidden <= 0)
    raise(ErrorKind::InvalidSize, "teacher hidden width must be positive");
  if (t.kind == TaskSpec::Kind::GaussianBlobClassification && t.out_dim < 2)
    raise(ErrorKind::InvalidSize, "classification needs at least two classes");
  if (!t.input_shift.empty() && t.input_shift.size() != static_cast<size_t>(t.in_dim))
    raise(ErrorKind::InvalidSize, "input_shift length must equal in_dim");
}

}  // namespace

Dataset gen_task(const TaskSpec& task) {
  check_task(task);

  Dataset ds;
  ds.rows = task.n;
  ds.in_dim = task.in_dim;
  ds.out_dim = task.out_dim;
  ds.split = task.split;
  ds.inputs.resize(static_cast<size_t>(task.n * task.in_dim));

  Rng data_rng(derive_seed(task.effective_data_seed(), kStreamData));
  for (double& x : ds.inputs) x = data_rng.normal();
  if (!task.input_shift.empty()) {
    for (int64_t r = 0; r < task.n; ++r)
      for (int64_t j = 0; j < task.in_dim; ++j)
        ds.inputs[static_cast<size_t>(r * task.in_dim + j)] += task.input_shift[j];
  }

  if (task.kind == TaskSpec::Kind::TeacherMlpRegression) {
    ToyModelSpec teacher_spec;
    teacher_spec.layer_sizes = {task.in_dim, task.teacher_hidden, task.out_dim};
    teacher_spec.activation = Activation::Tanh;
    teacher_spec.loss = Loss::MSE;
    teacher_spec.seed = derive_seed(task.seed, kStreamTeacher);
    const ToyModel teacher = init_model(teacher_spec);

    Dataset probe;
    probe.rows = ds.rows;
    probe.in_dim = ds.in_dim;
    probe.out_dim = ds.out_dim;
    probe.inputs = ds.inputs;
    probe.targets.assign(static_cast<size_t>(ds.rows * ds.out_dim), 0.0);
    ds.targets = forward(teacher, probe).predictions;
    if (task.noise_std > 0.0) {
      for (double& y : ds.targets) y += task.noise_std * data_rng.normal();
    }
  } else {
    ds.classification = true;
    ds.labels.resize(static_cast<size_t>(task.n));

    // Centre layout: spaced along the axes with a small seeded jitter, so any
    // two centres are at least `separation` apart.
    Rng layout_rng(derive_seed(task.seed, kStreamTeacher));
    const int64_t classes = task.out_dim;
    std::vector<double> centers(static_cast<size_t>(classes * task.in_dim), 0.0);
    for (int64_t c = 0; c < classes; ++c) {
      const int64_t axis = c % task.in_dim;
      const double radius = task.separation * (1.0 + static_cast<double>(c / task.in_dim));
      centers[static_cast<size_t>(c * task.in_dim + axis)] = radius;
      for (int64_t j = 0; j < task.in_dim; ++j)
        centers[static_cast<size_t>(c * task.in_dim + j)] +=
            0.02 * task.separation * layout_rng.normal();
    }

    for (int64_t r = 0; r < task.n; ++r) {
      const int64_t c = r % classes;
      ds.labels[static_cast<size_t>(r)] = c;
      for (int64_t j = 0; j < task.in_dim; ++j)
        ds.inputs[static_cast<size_t>(r * task.in_dim + j)] +=
            centers[static_cast<size_t>(c * task.in_dim + j)];
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

struct Workspace {
  // activations[0] aliases the input rows; activations[k] holds layer k output
  std::vector<std::vector<double>> activations;
};

// Runs the affine/activation stack for rows [row_begin, row_end) and returns
// the loss *sum* (not mean) over those rows. When ws != nullptr, the
// per-layer activations are kept for backprop.
double forward_rows(const ToyModel& model, const Dataset& batch, int64_t row_begin,
                    int64_t row_end, std::vector<double>* predictions, Workspace* ws) {
  const ToyModelSpec& spec = model.spec;
  const int64_t rows = row_end - row_begin;
  const size_t layers = spec.layer_count();

  std::vector<double> current(
      batch.inputs.begin() + row_begin * batch.in_dim,
      batch.inputs.begin() + row_end * batch.in_dim);
  if (ws) {
    ws->activations.clear();
    ws->activations.push_back(current);
  }

  for (size_t k = 0; k < layers; ++k) {
    const int64_t in = spec.layer_sizes[k];
    const int64_t out = spec.layer_sizes[k + 1];
    const std::vector<double>& w = model.weights[k];
    const std::vector<double>& b = model.biases[k];
    std::vector<double> next(static_cast<size_t>(rows * out));
    for (int64_t r = 0; r < rows; ++r) {
      const double* x = current.data() + r * in;
      double* y = next.data() + r * out;
      for (int64_t o = 0; o < out; ++o) {
        double acc = b[static_cast<size_t>(o)];
        const double* wrow = w.data() + o * in;
        for (int64_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
      }
    }
    if (k + 1 < layers) {
      if (spec.activation == Activation::Tanh) {
        for (double& v : next) v = std::tanh(v);
      } else {
        for (double& v : next) v = relu(v);
      }
    }
    current = std::move(next);
    if (ws) ws->activations.push_back(current);
  }

  const int64_t out_dim = spec.layer_sizes.back();
  double loss_sum = 0.0;
  if (spec.loss == Loss::MSE) {
    for (int64_t r = 0; r < rows; ++r) {
      const double* p = current.data() + r * out_dim;
      const double* t = batch.targets.data() + (row_begin + r) * out_dim;
      for (int64_t o = 0; o < out_dim; ++o) {
        const double e = p[o] - t[o];
        loss_sum += e * e;
      }
    }
  } else {
    for (int64_t r = 0; r < rows; ++r) {
      const double* p = current.data() + r * out_dim;
      double max_logit = p[0];
      for (int64_t o = 1; o < out_dim; ++o) max_logit = std::max(max_logit, p[o]);
      double denom = 0.0;
      for (int64_t o = 0; o < out_dim; ++o) denom += std::exp(p[o] - max_logit);
      const int64_t label = batch.labels[static_cast<size_t>(row_begin + r)];
      loss_sum += std::log(denom) - (p[label] - max_logit);
    }
  }

  if (predictions) *predictions = std::move(current);
  return loss_sum;
}

double loss_denominator(const ToyModelSpec& spec, int64_t rows) {
  return spec.loss == Loss::MSE
             ? static_cast<double>(rows) * static_cast<double>(spec.layer_sizes.back())
             : static_cast<double>(rows);
}

void check_batch(const ToyModel& model, const Dataset& batch) {
  const ToyModelSpec& spec = model.spec;
  if (batch.in_dim != spec.layer_sizes.front())
    raise(ErrorKind::ShapeMismatch, "batch input width " + std::to_string(batch.in_dim) +
                                        " does not match model input " +
                                        std::to_string(spec.layer_sizes.front()));
  if (spec.loss == Loss::MSE) {
    if (batch.classification || batch.out_dim != spec.layer_sizes.back())
      raise(ErrorKind::ShapeMismatch, "regression batch target width does not match model");
    if (batch.targets.size() != static_cast<size_t>(batch.rows * batch.out_dim))
      raise(ErrorKind::ShapeMismatch, "target matrix size does not match rows");
  } else {
    if (!batch.classification)
      raise(ErrorKind::ShapeMismatch, "cross-entropy needs class labels");
    if (batch.labels.size() != static_cast<size_t>(batch.rows))
      raise(ErrorKind::ShapeMismatch, "label count does not match rows");
    for (int64_t l : batch.labels)
      if (l < 0 || l >= spec.layer_sizes.back())
        raise(ErrorKind::ShapeMismatch, "label out of range for model output width");
  }
  if (batch.inputs.size() != static_cast<size_t>(batch.rows * batch.in_dim))
    raise(ErrorKind::ShapeMismatch, "input matrix size does not match rows");
}

}  // namespace

ForwardResult forward(const ToyModel& model, const Dataset& batch) {
  check_batch(model, batch);
  ForwardResult result;
  const double sum = forward_rows(model, batch, 0, batch.rows, &result.predictions, nullptr);
  result.loss = sum / loss_denominator(model.spec, batch.rows);
  return result;
}

Gradients backward(const ToyModel& model, const Dataset& batch) {
  check_batch(model, batch);
  const ToyModelSpec& spec = model.spec;
  const size_t layers = spec.layer_count();
  const int64_t rows = batch.rows;
  const int64_t out_dim = spec.layer_sizes.back();

  Workspace ws;
  std::vector<double> predictions;
  forward_rows(model, batch, 0, rows, &predictions, &ws);

  // delta = dLoss/dz for the output layer
  std::vector<double> delta(static_cast<size_t>(rows * out_dim));
  if (spec.loss == Loss::MSE) {
    const double scale = 2.0 / loss_denominator(spec, rows);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t o = 0; o < out_dim; ++o) {
        const size_t idx = static_cast<size_t>(r * out_dim + o);
        delta[idx] = scale * (predictions[idx] - batch.targets[idx]);
      }
  } else {
    const double scale = 1.0 / static_cast<double>(rows);
    for (int64_t r = 0; r < rows; ++r) {
      const double* p = predictions.data() + r * out_dim;
      double max_logit = p[0];
      for (int64_t o = 1; o < out_dim; ++o) max_logit = std::max(max_logit, p[o]);
      double denom = 0.0;
      for (int64_t o = 0; o < out_dim; ++o) denom += std::exp(p[o] - max_logit);
      for (int64_t o = 0; o < out_dim; ++o) {
        const double soft = std::exp(p[o] - max_logit) / denom;
        const double onehot = batch.labels[static_cast<size_t>(r)] == o ? 1.0 : 0.0;
        delta[static_cast<size_t>(r * out_dim + o)] = scale * (soft - onehot);
      }
    }
  }

  Gradients grads;
  grads.weights.resize(layers);
  grads.biases.resize(layers);

  for (size_t k = layers; k-- > 0;) {
    const int64_t in = spec.layer_sizes[k];
    const int64_t out = spec.layer_sizes[k + 1];
    const std::vector<double>& below = ws.activations[k];

    std::vector<double>& dw = grads.weights[k];
    std::vector<double>& db = grads.biases[k];
    dw.assign(static_cast<size_t>(out * in), 0.0);
    db.assign(static_cast<size_t>(out), 0.0);

    for (int64_t r = 0; r < rows; ++r) {
      const double* d = delta.data() + r * out;
      const double* x = below.data() + r * in;
      for (int64_t o = 0; o < out; ++o) {
        db[static_cast<size_t>(o)] += d[o];
        double* wrow = dw.data() + o * in;
        for (int64_t i = 0; i < in; ++i) wrow[i] += d[o] * x[i];
      }
    }

    if (k == 0) break;

    const std::vector<double>& w = model.weights[k];
    std::vector<double> prev(static_cast<size_t>(rows * in), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
      const double* d = delta.data() + r * out;
      double* pd = prev.data() + r * in;
      for (int64_t o = 0; o < out; ++o) {
        const double* wrow = w.data() + o * in;
        for (int64_t i = 0; i < in; ++i) pd[i] += d[o] * wrow[i];
      }
      const double* act = below.data() + r * in;
      if (spec.activation == Activation::Tanh) {
        for (int64_t i = 0; i < in; ++i) pd[i] *= 1.0 - act[i] * act[i];
      } else {
        for (int64_t i = 0; i < in; ++i) pd[i] *= act[i] > 0.0 ? 1.0 : 0.0;
      }
    }
    delta = std::move(prev);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// training and evaluation

void TrainConfig::validate(int64_t dataset_rows) const {
  if (steps < 0) raise(ErrorKind::InvalidArgument, "steps must be non-negative");
  if (batch_size <= 0) raise(ErrorKind::InvalidArgument, "batch size must be positive");
  if (batch_size > dataset_rows)
    raise(ErrorKind::InvalidArgument, "batch size exceeds dataset size");
  if (learning_rate < 0.0) raise(ErrorKind::InvalidArgument, "learning rate must be >= 0");
  if (eval_every <= 0) raise(ErrorKind::InvalidArgument, "eval_every must be positive");
}

TrainResult train(const ToyModel& model, const Dataset& data, const TrainConfig& config,
                  const Dataset* eval_data, const StepObserver& observer) {
  check_batch(model, data);
  config.validate(data.rows);
  if (eval_data) check_batch(model, *eval_data);

  TrainResult result;
  result.model = model;
  if (config.steps == 0) return result;

  Rng shuffle_rng(derive_seed(config.seed, kStreamShuffle));
  std::vector<int64_t> order(static_cast<size_t>(data.rows));
  std::iota(order.begin(), order.end(), 0);
  shuffle_rng.shuffle(order);
  size_t cursor = 0;

  Dataset batch;
  batch.rows = config.batch_size;
  batch.in_dim = data.in_dim;
  batch.out_dim = data.out_dim;
  batch.classification = data.classification;
  batch.split = data.split;
  batch.inputs.resize(static_cast<size_t>(config.batch_size * data.in_dim));
  if (data.classification)
    batch.labels.resize(static_cast<size_t>(config.batch_size));
  else
    batch.targets.resize(static_cast<size_t>(config.batch_size * data.out_dim));

  const Dataset& eval_set = eval_data ? *eval_data : data;

  for (int64_t step = 1; step <= config.steps; ++step) {
    if (cursor + static_cast<size_t>(config.batch_size) > order.size()) {
      shuffle_rng.shuffle(order);
      cursor = 0;
    }
    for (int64_t r = 0; r < config.batch_size; ++r) {
      const int64_t src = order[cursor + static_cast<size_t>(r)];
      std::memcpy(batch.inputs.data() + r * data.in_dim,
                  data.inputs.data() + src * data.in_dim,
                  static_cast<size_t>(data.in_dim) * sizeof(double));
      if (data.classification)
        batch.labels[static_cast<size_t>(r)] = data.labels[static_cast<size_t>(src)];
      else
        std::memcpy(batch.targets.data() + r * data.out_dim,
                    data.targets.data() + src * data.out_dim,
                    static_cast<size_t>(data.out_dim) * sizeof(double));
    }
    cursor += static_cast<size_t>(config.batch_size);

    const ForwardResult fwd = forward(result.model, batch);
    if (!std::isfinite(fwd.loss))
      raise(ErrorKind::DivergedLoss,
            "training loss became non-finite at step " + std::to_string(step));
    const Gradients grads = backward(result.model, batch);

    for (size_t k = 0; k < result.model.weights.size(); ++k) {
      std::vector<double>& w = result.model.weights[k];
      const std::vector<double>& gw = grads.weights[k];
      for (size_t i = 0; i < w.size(); ++i) w[i] -= config.learning_rate * gw[i];
      std::vector<double>& b = result.model.biases[k];
      const std::vector<double>& gb = grads.biases[k];
      for (size_t i = 0; i < b.size(); ++i) b[i] -= config.learning_rate * gb[i];
    }

    if (observer) observer(step, result.model);

    if (step % config.eval_every == 0 || step == config.steps) {
      const EvalResult ev = evaluate(result.model, eval_set);
      if (!std::isfinite(ev.loss))
        raise(ErrorKind::DivergedLoss,
              "eval loss became non-finite at step " + std::to_string(step));
      result.trace.records.push_back({step, fwd.loss, ev.loss});
      if (config.target_loss && !result.trace.steps_to_target &&
          ev.loss <= *config.target_loss) {
        result.trace.steps_to_target = step;
        break;
      }
    }
  }
  return result;
}

EvalResult evaluate(const ToyModel& model, const Dataset& dataset) {
  check_batch(model, dataset);
  const int64_t rows = dataset.rows;
  if (rows == 0) raise(ErrorKind::InvalidSize, "cannot evaluate on an empty dataset");

  const size_t chunks = (static_cast<size_t>(rows) + kEvalChunk - 1) / kEvalChunk;
  std::vector<double> loss_sums(chunks, 0.0);
  std::vector<int64_t> correct(chunks, 0);

  parallel_for(chunks, [&](size_t c) {
    const int64_t begin = static_cast<int64_t>(c * kEvalChunk);
    const int64_t end = std::min<int64_t>(begin + static_cast<int64_t>(kEvalChunk), rows);
    std::vector<double> preds;
    loss_sums[c] = forward_rows(model, dataset, begin, end, &preds, nullptr);
    if (dataset.classification) {
      const int64_t out_dim = model.spec.layer_sizes.back();
      for (int64_t r = 0; r < end - begin; ++r) {
        const double* p = preds.data() + r * out_dim;
        int64_t arg = 0;
        for (int64_t o = 1; o < out_dim; ++o)
          if (p[o] > p[arg]) arg = o;
        if (arg == dataset.labels[static_cast<size_t>(begin + r)]) ++correct[c];
      }
    }
  });

  double total = 0.0;
  int64_t hits = 0;
  for (size_t c = 0; c < chunks; ++c) {
    total += loss_sums[c];
    hits += correct[c];
  }

  EvalResult out;
  out.loss = total / loss_denominator(model.spec, rows);
  if (dataset.classification)
    out.accuracy = static_cast<double>(hits) / static_cast<double>(rows);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint bridge

namespace {

std::string layer_sizes_text(const std::vector<int64_t>& sizes) {
  std::string s;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(sizes[i]);
  }
  return s;
}

std::vector<int64_t> parse_layer_sizes(const std::string& text) {
  std::vector<int64_t> out;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t comma = text.find(',', pos);
    const std::string tok =
        text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!tok.empty()) {
      int64_t v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size())
        raise(ErrorKind::SpecMismatch, "bad layer size \"" + tok + "\"");
      out.push_back(v);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

Checkpoint model_to_checkpoint(const ToyModel& model) {
  Checkpoint ckpt;
  for (size_t k = 0; k < model.weights.size(); ++k) {
    const int64_t in = model.spec.layer_sizes[k];
    const int64_t out = model.spec.layer_sizes[k + 1];
    std::vector<float> w(model.weights[k].begin(), model.weights[k].end());
    std::vector<float> b(model.biases[k].begin(), model.biases[k].end());
    ckpt.add("layer" + std::to_string(k) + ".weight", Tensor::from_f32(w, {out, in}));
    ckpt.add("layer" + std::to_string(k) + ".bias", Tensor::from_f32(b, {out}));
  }
  ckpt.set_metadata("toy.layer_sizes", layer_sizes_text(model.spec.layer_sizes));
  ckpt.set_metadata("toy.activation", activation_name(model.spec.activation));
  ckpt.set_metadata("toy.loss", loss_name(model.spec.loss));
  ckpt.set_metadata("toy.seed", std::to_string(model.spec.seed));
  return ckpt;
}

ToyModel checkpoint_to_model(const CheckpointSource& source, const ToyModelSpec& spec) {
  spec.validate();
  ToyModel model;
  model.spec = spec;

  size_t expected = 0;
  for (size_t k = 0; k < spec.layer_count(); ++k) {
    const int64_t in = spec.layer_sizes[k];
    const int64_t out = spec.layer_sizes[k + 1];
    const std::string wname = "layer" + std::to_string(k) + ".weight";
    const std::string bname = "layer" + std::to_string(k) + ".bias";
    expected += 2;

    auto wit = source.metas().find(wname);
    auto bit = source.metas().find(bname);
    if (wit == source.metas().end() || bit == source.metas().end())
      raise(ErrorKind::SpecMismatch, "checkpoint " + source.id() + " is missing \"" +
                                         (wit == source.metas().end() ? wname : bname) + "\"");
    if (wit->second.shape != std::vector<int64_t>{out, in})
      raise(ErrorKind::SpecMismatch, "tensor \"" + wname + "\" has the wrong shape");
    if (bit->second.shape != std::vector<int64_t>{out})
      raise(ErrorKind::SpecMismatch, "tensor \"" + bname + "\" has the wrong shape");
    if (!dtype_is_float(wit->second.dtype) || !dtype_is_float(bit->second.dtype))
      raise(ErrorKind::SpecMismatch, "model parameters must be floating point");

    model.weights.push_back(source.load(wname).to_f64());
    model.biases.push_back(source.load(bname).to_f64());
  }
  if (source.metas().size() != expected)
    raise(ErrorKind::SpecMismatch, "checkpoint " + source.id() +
                                       " has tensors that do not belong to this model spec");
  return model;
}

ToyModelSpec spec_from_metadata(const CheckpointSource& source) {
  const auto& meta = source.metadata();
  auto need = [&](const char* key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end())
      raise(ErrorKind::SpecMismatch,
            "checkpoint " + source.id() + " carries no \"" + key + "\" metadata");
    return it->second;
  };
  ToyModelSpec spec;
  spec.layer_sizes = parse_layer_sizes(need("toy.layer_sizes"));
  if (!activation_from_name(need("toy.activation"), spec.activation))
    raise(ErrorKind::SpecMismatch, "unknown activation in checkpoint metadata");
  if (!loss_from_name(need("toy.loss"), spec.loss))
    raise(ErrorKind::SpecMismatch, "unknown loss in checkpoint metadata");
  if (auto it = meta.find("toy.seed"); it != meta.end())
    spec.seed = std::strtoull(it->second.c_str(), nullptr, 10);
  spec.validate();
  return spec;
}

Evaluator make_toy_evaluator(const ToyModelSpec& spec, Dataset dataset) {
  return [spec, dataset = std::move(dataset)](const CheckpointSource& ckpt) {
    const ToyModel model = checkpoint_to_model(ckpt, spec);
    return evaluate(model, dataset).loss;
  };
}

// ---------------------------------------------------------------------------
// dataset files and serialized specs

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.emplace_back("inputs",
                       Tensor::from_f64(dataset.inputs, {dataset.rows, dataset.in_dim}));
  if (dataset.classification) {
    entries.emplace_back("labels", Tensor::from_i64(dataset.labels, {dataset.rows}));
  } else {
    entries.emplace_back("targets",
                         Tensor::from_f64(dataset.targets, {dataset.rows, dataset.out_dim}));
  }
  write_checkpoint(entries, path,
                   {{"toy.kind", "dataset"},
                    {"toy.split", split_name(dataset.split)},
                    {"toy.classes", std::to_string(dataset.out_dim)}});
}

Dataset load_dataset(const CheckpointSource& source) {
  Dataset ds;
  const Tensor inputs = source.load("inputs");
  if (inputs.shape.size() != 2)
    raise(ErrorKind::SpecMismatch, "dataset inputs must be a rows x dim matrix");
  ds.rows = inputs.shape[0];
  ds.in_dim = inputs.shape[1];
  ds.inputs = inputs.to_f64();

  if (source.has("labels")) {
    ds.classification = true;
    const Tensor labels = source.load("labels");
    if (labels.dtype != Dtype::I64 || labels.shape != std::vector<int64_t>{ds.rows})
      raise(ErrorKind::SpecMismatch, "dataset labels must be I64 with one entry per row");
    ds.labels.resize(static_cast<size_t>(ds.rows));
    std::memcpy(ds.labels.data(), labels.data.data(), labels.data.size());
    ds.out_dim = 2;
    if (auto it = source.metadata().find("toy.classes"); it != source.metadata().end())
      ds.out_dim = std::strtoll(it->second.c_str(), nullptr, 10);
    for (int64_t l : ds.labels) ds.out_dim = std::max(ds.out_dim, l + 1);
  } else {
    const Tensor targets = source.load("targets");
    if (targets.shape.size() != 2 || targets.shape[0] != ds.rows)
      raise(ErrorKind::SpecMismatch, "dataset targets must be a rows x dim matrix");
    ds.out_dim = targets.shape[1];
    ds.targets = targets.to_f64();
  }
  if (auto it = source.metadata().find("toy.split"); it != source.metadata().end()) {
    Split s;
    if (split_from_name(it->second, s)) ds.split = s;
  }
  return ds;
}

std::string TaskSpec::to_json_string() const {
  json j;
  j["kind"] = task_kind_name(kind);
  j["seed"] = seed;
  if (data_seed) j["data_seed"] = *data_seed;
  j["n"] = n;
  j["in_dim"] = in_dim;
  j["out_dim"] = out_dim;
  j["teacher_hidden"] = teacher_hidden;
  j["noise_std"] = noise_std;
  j["separation"] = separation;
  if (!input_shift.empty()) j["input_shift"] = input_shift;
  j["split"] = split_name(split);
  return j.dump();
}

TaskSpec TaskSpec::from_json_string(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorKind::InvalidArgument, "task spec is not a valid object");
  TaskSpec t;
  if (j.contains("kind") && !task_kind_from_name(j["kind"].get<std::string>(), t.kind))
    raise(ErrorKind::InvalidArgument, "unknown task kind");
  if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
  if (j.contains("data_seed")) t.data_seed = j["data_seed"].get<uint64_t>();
  if (j.contains("n")) t.n = j["n"].get<int64_t>();
  if (j.contains("in_dim")) t.in_dim = j["in_dim"].get<int64_t>();
  if (j.contains("out_dim")) t.out_dim = j["out_dim"].get<int64_t>();
  if (j.contains("teacher_hidden")) t.teacher_hidden = j["teacher_hidden"].get<int64_t>();
  if (j.contains("noise_std")) t.noise_std = j["noise_std"].get<double>();
  if (j.contains("separation")) t.separation = j["separation"].get<double>();
  if (j.contains("input_shift"))
    t.input_shift = j["input_shift"].get<std::vector<double>>();
  if (j.contains("split") && !split_from_name(j["split"].get<std::string>(), t.split))
    raise(ErrorKind::InvalidArgument, "unknown split tag");
  return t;
}

std::string TrainConfig::to_json_string() const {
  json j;
  j["steps"] = steps;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["eval_every"] = eval_every;
  if (target_loss) j["target_loss"] = *target_loss;
  j["seed"] = seed;
  return j.dump();
}

TrainConfig TrainConfig::from_json_string(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorKind::InvalidArgument, "train config is not a valid object");
  TrainConfig c;
  if (j.contains("steps")) c.steps = j["steps"].get<int64_t>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int64_t>();
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("eval_every")) c.eval_every = j["eval_every"].get<int64_t>();
  if (j.contains("target_loss") && !j["target_loss"].is_null())
    c.target_loss = j["target_loss"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  return c;
}

std::string TrainTrace::to_csv() const {
  std::string out = "step,train_loss,eval_loss\n";
  char buf[96];
  for (const auto& rec : records) {
    char* p = buf;
    auto append = [&](double v) {
      *p++ = ',';
      auto [q, ec] = std::to_chars(p, buf + sizeof(buf), v);
      (void)ec;
      p = q;
    };
    auto [q0, ec0] = std::to_chars(p, buf + sizeof(buf), rec.step);
    (void)ec0;
    p = q0;
    append(rec.train_loss);
    append(rec.eval_loss);
    out.append(buf, static_cast<size_t>(p - buf));
    out.push_back('\n');
  }
  if (steps_to_target) out += "steps_to_target," + std::to_string(*steps_to_target) + ",\n";
  return out;
}

}  // namespace deltaforge
