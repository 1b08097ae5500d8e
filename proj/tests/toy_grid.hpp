// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deltaforge/pipeline.hpp"
#include "deltaforge/rng.hpp"
#include "deltaforge/toylab.hpp"

namespace dftest {

// One pretraining run snapshotted at fixed steps plays the role of a family
// of successive base-model versions; continued SGD on a shifted task plays
// the fine-tuning stage. Every quantity here is pinned so seeded experiments
// reproduce bitwise.
struct ToyGrid {
  deltaforge::ToyModelSpec model;
  deltaforge::TaskSpec pretrain_task;
  deltaforge::TaskSpec finetune_task;
  deltaforge::TaskSpec eval_task;
  deltaforge::TrainConfig pretrain_cfg;
  deltaforge::TrainConfig finetune_cfg;
  std::vector<int64_t> snapshot_steps;
};

inline ToyGrid default_toy_grid(uint64_t seed) {
  using namespace deltaforge;
  ToyGrid g;

  g.model.layer_sizes = {4, 24, 1};
  g.model.activation = Activation::Tanh;
  g.model.loss = Loss::MSE;
  g.model.seed = derive_seed(seed, 101);

  g.pretrain_task.kind = TaskSpec::Kind::TeacherMlpRegression;
  g.pretrain_task.seed = derive_seed(seed, 102);
  g.pretrain_task.n = 512;
  g.pretrain_task.in_dim = 4;
  g.pretrain_task.out_dim = 1;
  g.pretrain_task.teacher_hidden = 12;
  g.pretrain_task.split = Split::Pretrain;

  // Fine-tuning targets a different teacher: a held task rather than more of
  // the pretraining distribution.
  g.finetune_task = g.pretrain_task;
  g.finetune_task.seed = derive_seed(seed, 107);
  g.finetune_task.data_seed = derive_seed(seed, 103);
  g.finetune_task.n = 256;
  g.finetune_task.split = Split::Finetune;

  g.eval_task = g.finetune_task;
  g.eval_task.data_seed = derive_seed(seed, 104);
  g.eval_task.n = 512;
  g.eval_task.split = Split::Eval;

  g.pretrain_cfg.steps = 4000;
  g.pretrain_cfg.batch_size = 32;
  g.pretrain_cfg.learning_rate = 0.03;
  g.pretrain_cfg.eval_every = 500;
  g.pretrain_cfg.seed = derive_seed(seed, 105);

  g.finetune_cfg.steps = 1500;
  g.finetune_cfg.batch_size = 32;
  g.finetune_cfg.learning_rate = 0.03;
  g.finetune_cfg.eval_every = 5;
  g.finetune_cfg.target_loss = 0.01;
  g.finetune_cfg.seed = derive_seed(seed, 106);

  g.snapshot_steps = {100, 300, 900, 2000, 4000};
  return g;
}

// Pretrains once and returns the snapshot models M_1..M_k.
inline std::vector<deltaforge::ToyModel> build_versions(const ToyGrid& grid) {
  using namespace deltaforge;
  const Dataset pretrain_data = gen_task(grid.pretrain_task);
  std::vector<ToyModel> versions;
  const StepObserver observer = [&](int64_t step, const ToyModel& m) {
    for (int64_t s : grid.snapshot_steps)
      if (s == step) versions.push_back(m);
  };
  const ToyModel start = init_model(grid.model);
  (void)train(start, pretrain_data, grid.pretrain_cfg, nullptr, observer);
  return versions;
}

// Saves versions as checkpoints under dir; returns the file paths.
inline std::vector<std::string> save_versions(const std::vector<deltaforge::ToyModel>& versions,
                                              const std::filesystem::path& dir) {
  std::vector<std::string> paths;
  for (size_t i = 0; i < versions.size(); ++i) {
    const auto path = dir / ("M" + std::to_string(i + 1) + ".st");
    save_checkpoint(deltaforge::model_to_checkpoint(versions[i]), path);
    paths.push_back(path.string());
  }
  return paths;
}

}  // namespace dftest
