// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deltaforge/delta_ops.hpp"

namespace deltaforge {

// Pure function from a checkpoint to a finite scalar loss.
using Evaluator = std::function<double(const CheckpointSource&)>;

struct ParamDistance {
  double l2 = 0.0;
  std::optional<double> cosine_of_diffs_vs_reference;
};

// Global L2 distance between aligned checkpoints; symmetric in (a, b). When
// `reference` is given, also reports the cosine between (a - b) and the
// reference diff over the shared tensor set.
ParamDistance param_distance(const CheckpointSource& a, const CheckpointSource& b,
                             const DiffVector* reference = nullptr);

// Losses along the straight segment between two checkpoints, plus the
// maximum excess over the linear interpolation of the endpoint losses.
// The barrier may be negative; it is never clamped.
struct BarrierProfile {
  std::vector<double> lambda_grid;
  std::vector<double> losses;
  double barrier = 0.0;

  std::string to_csv() const;
  std::string to_json_string() const;
};

std::vector<double> default_lambda_grid();  // {0, 0.1, ..., 1.0}

BarrierProfile loss_barrier(const CheckpointSource& a, const CheckpointSource& b,
                            const Evaluator& evaluator, const InterpolationSpec& grid);

// cell[i][j] = metric of versions[i] patched with diff j (i != j);
// diagonal[i] = metric of the directly fine-tuned version i;
// base_row[i] = metric of the plain base version i.
struct EffectivenessMatrix {
  std::vector<std::string> versions;
  std::vector<std::vector<double>> cells;
  std::vector<double> diagonal;
  std::vector<double> base_row;

  std::string to_csv() const;
  std::string to_json_string() const;
};

EffectivenessMatrix effectiveness_matrix(
    const std::vector<const CheckpointSource*>& bases, const std::vector<DiffVector>& diffs,
    const std::vector<const CheckpointSource*>& finetuned, const Evaluator& evaluator);

// Spearman rank correlation with average ranks for ties. NaN-free inputs of
// equal nonzero length; returns 0 when either side is constant.
double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace deltaforge
