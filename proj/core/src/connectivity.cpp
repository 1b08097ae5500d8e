// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/connectivity.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace deltaforge {

namespace {

using nlohmann::json;

std::string double_text(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void check_grid(const std::vector<double>& grid) {
  if (grid.size() < 2)
    raise(ErrorKind::InvalidArgument, "lambda grid needs at least the two endpoints");
  if (grid.front() != 0.0 || grid.back() != 1.0)
    raise(ErrorKind::InvalidArgument, "lambda grid must start at 0 and end at 1");
  for (size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1]))
      raise(ErrorKind::InvalidArgument, "lambda grid must be strictly increasing");
  }
}

}  // namespace

ParamDistance param_distance(const CheckpointSource& a, const CheckpointSource& b,
                             const DiffVector* reference) {
  const DiffVector diff = compute_diff(a, b);

  ParamDistance out;
  double sum_sq = 0.0;
  for (const auto& [name, tensor] : diff.deltas) {
    double acc = 0.0;
    const float* v = reinterpret_cast<const float*>(tensor.data.data());
    const size_t n = static_cast<size_t>(tensor.element_count());
    for (size_t k = 0; k < n; ++k) acc += static_cast<double>(v[k]) * v[k];
    sum_sq += acc;
  }
  out.l2 = std::sqrt(sum_sq);

  if (reference) {
    double dot = 0.0, ref_sq = 0.0;
    for (const auto& [name, tensor] : diff.deltas) {
      auto it = reference->deltas.find(name);
      if (it == reference->deltas.end())
        raise(ErrorKind::NameSetMismatch,
              "reference diff has no entry for tensor \"" + name + "\"");
      if (it->second.shape != tensor.shape)
        raise(ErrorKind::ShapeMismatch, "reference diff shape differs for \"" + name + "\"");
      const float* d = reinterpret_cast<const float*>(tensor.data.data());
      const float* r = reinterpret_cast<const float*>(it->second.data.data());
      const size_t n = static_cast<size_t>(tensor.element_count());
      for (size_t k = 0; k < n; ++k) {
        dot += static_cast<double>(d[k]) * r[k];
        ref_sq += static_cast<double>(r[k]) * r[k];
      }
    }
    const double denom = out.l2 * std::sqrt(ref_sq);
    if (denom > 0.0) out.cosine_of_diffs_vs_reference = dot / denom;
  }
  return out;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

BarrierProfile loss_barrier(const CheckpointSource& a, const CheckpointSource& b,
                            const Evaluator& evaluator, const InterpolationSpec& spec) {
  const std::vector<double> grid = spec.grid.empty() ? default_lambda_grid() : spec.grid;
  check_grid(grid);

  BarrierProfile profile;
  profile.lambda_grid = grid;
  profile.losses.resize(grid.size());

  for (size_t k = 0; k < grid.size(); ++k) {
    const Checkpoint point = interpolate(a, b, grid[k]);
    const double loss = evaluator(point);
    if (!std::isfinite(loss))
      raise(ErrorKind::NonFiniteLoss,
            "evaluator returned a non-finite loss at lambda " + double_text(grid[k]));
    profile.losses[k] = loss;
  }

  // Max deviation above the chord over the interior grid points; the
  // endpoints deviate by exactly zero, so including them would clamp the
  // barrier at zero and hide negative (better-than-linear) paths.
  const double l0 = profile.losses.front();
  const double l1 = profile.losses.back();
  double barrier = 0.0;
  for (size_t k = 1; k + 1 < grid.size(); ++k) {
    const double chord = (1.0 - grid[k]) * l0 + grid[k] * l1;
    const double deviation = profile.losses[k] - chord;
    if (k == 1 || deviation > barrier) barrier = deviation;
  }
  profile.barrier = barrier;
  return profile;
}

EffectivenessMatrix effectiveness_matrix(
    const std::vector<const CheckpointSource*>& bases, const std::vector<DiffVector>& diffs,
    const std::vector<const CheckpointSource*>& finetuned, const Evaluator& evaluator) {
  const size_t n = bases.size();
  if (diffs.size() != n || finetuned.size() != n)
    raise(ErrorKind::IndexMisalignment,
          "bases, diffs and finetuned lists must share one version ordering");
  if (n == 0) raise(ErrorKind::InvalidArgument, "no versions");

  EffectivenessMatrix m;
  m.versions.reserve(n);
  for (const auto* b : bases) m.versions.push_back(b->id());
  m.cells.assign(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  m.diagonal.resize(n);
  m.base_row.resize(n);

  for (size_t i = 0; i < n; ++i) {
    m.base_row[i] = evaluator(*bases[i]);
    m.diagonal[i] = evaluator(*finetuned[i]);
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const AlignmentPlan plan =
          align(diffs[j].metas(), bases[i]->metas(), MismatchPolicy::ErrorOnMismatch);
      const ApplyResult patched =
          apply_diff(*bases[i], diffs[j], 1.0, plan, DtypePolicy::PromoteF32);
      m.cells[i][j] = evaluator(patched.checkpoint);
    }
  }
  return m;
}

std::string BarrierProfile::to_csv() const {
  std::string out = "lambda,loss\n";
  for (size_t k = 0; k < lambda_grid.size(); ++k)
    out += double_text(lambda_grid[k]) + "," + double_text(losses[k]) + "\n";
  out += "barrier," + double_text(barrier) + "\n";
  return out;
}

std::string BarrierProfile::to_json_string() const {
  json j;
  j["lambda_grid"] = lambda_grid;
  j["losses"] = losses;
  j["barrier"] = barrier;
  return j.dump(2);
}

std::string EffectivenessMatrix::to_csv() const {
  std::string out = "row";
  for (const auto& v : versions) out += "," + v;
  out += "\nbase";
  for (double v : base_row) out += "," + double_text(v);
  out += "\n";
  for (size_t j = 0; j < versions.size(); ++j) {
    out += "+diff_" + std::to_string(j + 1);
    for (size_t i = 0; i < versions.size(); ++i)
      out += "," + (i == j ? std::string() : double_text(cells[i][j]));
    out += "\n";
  }
  out += "finetuned";
  for (double v : diagonal) out += "," + double_text(v);
  out += "\n";
  return out;
}

std::string EffectivenessMatrix::to_json_string() const {
  json j;
  j["versions"] = versions;
  j["base_row"] = base_row;
  j["diagonal"] = diagonal;
  json rows = json::array();
  for (size_t i = 0; i < versions.size(); ++i) {
    json row = json::array();
    for (size_t jx = 0; jx < versions.size(); ++jx) {
      if (i == jx)
        row.push_back(nullptr);
      else
        row.push_back(cells[i][jx]);
    }
    rows.push_back(std::move(row));
  }
  j["cells"] = std::move(rows);
  return j.dump(2);
}

double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.empty())
    raise(ErrorKind::InvalidArgument, "rank correlation needs two equal-length series");

  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    return rank;
  };

  const std::vector<double> rx = ranks(xs);
  const std::vector<double> ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace deltaforge
