// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deltaforge/tensor_store.hpp"

namespace deltaforge {

// Checkpoint-shaped collection of signed parameter deltas, stored F32.
// Integer/boolean tensors never appear here; they are checked for equality
// at extraction time and copied from the target at application time.
struct DiffVector {
  std::map<std::string, Tensor> deltas;
  std::string finetuned_id;
  std::string base_id;

  std::map<std::string, TensorMeta> metas() const;
  bool empty() const { return deltas.empty(); }
};

enum class MismatchPolicy { SkipMismatch, ErrorOnMismatch };

// Per-tensor decision record governing a transfer. The lists are disjoint;
// apply + skip_shape + untouched together cover every target tensor name.
struct AlignmentPlan {
  std::vector<std::string> apply;
  std::vector<std::string> skip_shape;
  std::vector<std::string> missing_in_target;
  std::vector<std::string> untouched;
  MismatchPolicy policy = MismatchPolicy::SkipMismatch;
};

AlignmentPlan align(const std::map<std::string, TensorMeta>& diff_metas,
                    const std::map<std::string, TensorMeta>& target_metas,
                    MismatchPolicy policy);

// Extracts the diff vector finetuned - base. Defined only within one model
// version: name sets must be identical and shapes equal. Float tensors are
// promoted to F32 and differenced; integer tensors must be bit-identical.
DiffVector compute_diff(const CheckpointSource& finetuned, const CheckpointSource& base);

enum class DtypePolicy { Native, PromoteF32 };

struct TransferReport {
  size_t applied = 0;
  size_t skipped_shape = 0;
  size_t missing_in_target = 0;
  size_t untouched = 0;
  std::vector<std::pair<std::string, double>> delta_norms;  // applied tensors, sorted
  double scale = 1.0;
  DtypePolicy dtype_policy = DtypePolicy::Native;
  std::string output_id;

  std::string to_json_string() const;
};

struct ApplyResult {
  Checkpoint checkpoint;
  TransferReport report;
};

// target + scale * diff over the plan's apply set; everything else is copied
// byte-for-byte from the target. The output has exactly the target's tensor
// names. A NaN/Inf output element whose inputs were finite aborts the op.
ApplyResult apply_diff(const CheckpointSource& target, const DiffVector& diff, double scale,
                       const AlignmentPlan& plan,
                       DtypePolicy dtype_policy = DtypePolicy::Native);

struct InterpolationSpec {
  double lambda = 1.0;
  std::vector<double> grid;  // strictly increasing when present
};

// (1-lambda)*a + lambda*b elementwise in F32. lambda 0 and 1 return the
// endpoint verbatim rather than recomputing it.
Checkpoint interpolate(const CheckpointSource& a, const CheckpointSource& b, double lambda);

// m_t + (1-lambda)*(m_s - m_t) + diff elementwise in F32: the linear path
// from (m_s + diff) at lambda 0 to (m_t + diff) at lambda 1. At lambda 1 the
// result equals apply_diff(m_t, diff, 1) element-exact.
Checkpoint transfer_path(const CheckpointSource& m_s, const CheckpointSource& m_t,
                         const DiffVector& diff, double lambda);

// base + lambda * sum(diffs) elementwise in F32. All diffs must align fully
// with the base (no shape mismatches, no names missing from the base).
Checkpoint merge_task_vectors(const CheckpointSource& base,
                              const std::vector<DiffVector>& diffs, double lambda);

struct TensorStats {
  std::string name;
  double l2 = 0.0;
  double max_abs = 0.0;
  double fraction_zero = 0.0;
};

struct DiffStats {
  std::vector<TensorStats> per_tensor;  // sorted by name
  double global_l2 = 0.0;
  double global_max_abs = 0.0;
  double global_fraction_zero = 0.0;

  std::string to_json_string() const;
};

DiffStats diff_stats(const DiffVector& diff);

// Serialization of diff vectors through the container format. Provenance is
// carried in user metadata.
void save_diff(const DiffVector& diff, const std::filesystem::path& path);
DiffVector load_diff(const CheckpointSource& source);

const char* dtype_policy_name(DtypePolicy policy);
bool dtype_policy_from_name(const std::string& name, DtypePolicy& out);

}  // namespace deltaforge
