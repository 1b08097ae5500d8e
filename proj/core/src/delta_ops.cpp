// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/delta_ops.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "deltaforge/parallel.hpp"

namespace deltaforge {

namespace {

using nlohmann::json;

std::string shape_text(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_names(const CheckpointSource& a, const CheckpointSource& b) {
  auto ita = a.metas().begin();
  auto itb = b.metas().begin();
  while (ita != a.metas().end() && itb != b.metas().end()) {
    if (ita->first != itb->first) break;
    ++ita;
    ++itb;
  }
  if (ita != a.metas().end() || itb != b.metas().end()) {
    const std::string odd =
        ita != a.metas().end() ? ita->first : itb->first;
    raise(ErrorKind::NameSetMismatch, "tensor name sets differ between " + a.id() + " and " +
                                          b.id() + " (first difference near \"" + odd + "\")");
  }
}

void require_same_shape(const TensorMeta& a, const TensorMeta& b, const std::string& name) {
  if (a.shape != b.shape)
    raise(ErrorKind::ShapeMismatch, "tensor \"" + name + "\" has shape " +
                                        shape_text(a.shape) + " vs " + shape_text(b.shape));
}

// Per-tensor L2 over F32 values, accumulated in F64 element order.
double tensor_l2(const std::vector<float>& values) {
  double acc = 0.0;
  for (float v : values) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace

std::map<std::string, TensorMeta> DiffVector::metas() const {
  std::map<std::string, TensorMeta> out;
  for (const auto& [name, tensor] : deltas) {
    TensorMeta meta;
    meta.name = name;
    meta.dtype = tensor.dtype;
    meta.shape = tensor.shape;
    meta.begin = 0;
    meta.end = tensor.byte_size();
    out.emplace(name, std::move(meta));
  }
  return out;
}

AlignmentPlan align(const std::map<std::string, TensorMeta>& diff_metas,
                    const std::map<std::string, TensorMeta>& target_metas,
                    MismatchPolicy policy) {
  AlignmentPlan plan;
  plan.policy = policy;
  for (const auto& [name, meta] : diff_metas) {
    auto it = target_metas.find(name);
    if (it == target_metas.end()) {
      plan.missing_in_target.push_back(name);
    } else if (it->second.shape == meta.shape) {
      plan.apply.push_back(name);
    } else {
      if (policy == MismatchPolicy::ErrorOnMismatch)
        raise(ErrorKind::ShapeMismatch, "tensor \"" + name + "\" has shape " +
                                            shape_text(meta.shape) + " in the diff but " +
                                            shape_text(it->second.shape) + " in the target");
      plan.skip_shape.push_back(name);
    }
  }
  for (const auto& [name, _] : target_metas) {
    if (!diff_metas.count(name)) plan.untouched.push_back(name);
  }
  return plan;
}

DiffVector compute_diff(const CheckpointSource& finetuned, const CheckpointSource& base) {
  require_same_names(finetuned, base);

  DiffVector diff;
  diff.finetuned_id = finetuned.id();
  diff.base_id = base.id();

  std::vector<std::string> names = base.names();
  std::vector<std::optional<Tensor>> slots(names.size());

  parallel_for(names.size(), [&](size_t i) {
    const std::string& name = names[i];
    const TensorMeta& fm = finetuned.metas().at(name);
    const TensorMeta& bm = base.metas().at(name);
    require_same_shape(fm, bm, name);

    if (!dtype_is_float(fm.dtype) || !dtype_is_float(bm.dtype)) {
      const Tensor ft = finetuned.load(name);
      const Tensor bt = base.load(name);
      if (ft.dtype != bt.dtype || ft.data != bt.data)
        raise(ErrorKind::IntegerTensorDiffers,
              "non-float tensor \"" + name + "\" differs between " + finetuned.id() +
                  " and " + base.id());
      return;  // omitted from deltas
    }

    std::vector<float> f = finetuned.load(name).to_f32();
    const std::vector<float> b = base.load(name).to_f32();
    for (size_t k = 0; k < f.size(); ++k) f[k] -= b[k];
    slots[i] = Tensor::from_f32(f, fm.shape);
  });

  for (size_t i = 0; i < names.size(); ++i) {
    if (slots[i]) diff.deltas.emplace(names[i], std::move(*slots[i]));
  }
  return diff;
}

ApplyResult apply_diff(const CheckpointSource& target, const DiffVector& diff, double scale,
                       const AlignmentPlan& plan, DtypePolicy dtype_policy) {
  if (!std::isfinite(scale))
    raise(ErrorKind::InvalidArgument, "scale must be finite");

  // The plan must partition exactly the (diff, target) pair it was built for.
  {
    const AlignmentPlan fresh = align(diff.metas(), target.metas(), plan.policy);
    if (fresh.apply != plan.apply || fresh.skip_shape != plan.skip_shape ||
        fresh.missing_in_target != plan.missing_in_target || fresh.untouched != plan.untouched)
      raise(ErrorKind::PlanMismatch,
            "alignment plan does not match this (diff, target) pair");
  }

  ApplyResult result;
  result.report.scale = scale;
  result.report.dtype_policy = dtype_policy;
  result.report.applied = plan.apply.size();
  result.report.skipped_shape = plan.skip_shape.size();
  result.report.missing_in_target = plan.missing_in_target.size();
  result.report.untouched = plan.untouched.size();

  std::vector<Tensor> applied(plan.apply.size());
  std::vector<double> norms(plan.apply.size());

  parallel_for(plan.apply.size(), [&](size_t i) {
    const std::string& name = plan.apply[i];
    const Tensor target_tensor = target.load(name);
    if (!target_tensor.is_float()) {
      // Non-float targets take no arithmetic; copy through unchanged.
      applied[i] = target_tensor;
      norms[i] = 0.0;
      return;
    }
    std::vector<float> t = target_tensor.to_f32();
    const std::vector<float> d = diff.deltas.at(name).to_f32();
    norms[i] = tensor_l2(d);
    if (scale != 0.0) {
      const float s = static_cast<float>(scale);
      for (size_t k = 0; k < t.size(); ++k) {
        const float before_t = t[k];
        const float dv = d[k];
        t[k] = before_t + s * dv;
        if (!std::isfinite(t[k]) && std::isfinite(before_t) && std::isfinite(dv))
          raise(ErrorKind::NonFiniteResult,
                "non-finite element in tensor \"" + name + "\" after applying the diff");
      }
    }
    const Dtype out_dtype =
        dtype_policy == DtypePolicy::PromoteF32 ? Dtype::F32 : target_tensor.dtype;
    applied[i] = Tensor::cast_from_f32(t, out_dtype, target_tensor.shape);
  });

  for (size_t i = 0; i < plan.apply.size(); ++i) {
    result.checkpoint.add(plan.apply[i], std::move(applied[i]));
    result.report.delta_norms.emplace_back(plan.apply[i], norms[i]);
  }
  for (const auto& name : plan.skip_shape) result.checkpoint.add(name, target.load(name));
  for (const auto& name : plan.untouched) result.checkpoint.add(name, target.load(name));

  for (const auto& [k, v] : target.metadata()) result.checkpoint.set_metadata(k, v);
  result.checkpoint.set_id(target.id() + "+diff");
  result.report.output_id = result.checkpoint.id();
  return result;
}

namespace {

// Shared elementwise combiner: out[name] = F32(expr over promoted inputs).
// Endpoint short-circuits are handled by the callers.
template <typename Fn>
Checkpoint combine_float_checkpoints(const CheckpointSource& a, const CheckpointSource& b,
                                     Fn&& fn, const std::string& op_name) {
  require_same_names(a, b);
  std::vector<std::string> names = a.names();
  std::vector<Tensor> slots(names.size());

  parallel_for(names.size(), [&](size_t i) {
    const std::string& name = names[i];
    const TensorMeta& am = a.metas().at(name);
    const TensorMeta& bm = b.metas().at(name);
    require_same_shape(am, bm, name);
    if (!dtype_is_float(am.dtype) || !dtype_is_float(bm.dtype)) {
      const Tensor at = a.load(name);
      const Tensor bt = b.load(name);
      if (at.dtype != bt.dtype || at.data != bt.data)
        raise(ErrorKind::IntegerTensorDiffers,
              "non-float tensor \"" + name + "\" differs; " + op_name +
                  " is defined for float tensors only");
      slots[i] = at;
      return;
    }
    const std::vector<float> av = a.load(name).to_f32();
    const std::vector<float> bv = b.load(name).to_f32();
    std::vector<float> out(av.size());
    for (size_t k = 0; k < av.size(); ++k) out[k] = fn(name, k, av[k], bv[k]);
    slots[i] = Tensor::from_f32(out, am.shape);
  });

  Checkpoint result;
  for (size_t i = 0; i < names.size(); ++i) result.add(names[i], std::move(slots[i]));
  return result;
}

Checkpoint copy_as_is(const CheckpointSource& src) {
  Checkpoint out;
  for (const auto& name : src.names()) out.add(name, src.load(name));
  for (const auto& [k, v] : src.metadata()) out.set_metadata(k, v);
  out.set_id(src.id());
  return out;
}

}  // namespace

Checkpoint interpolate(const CheckpointSource& a, const CheckpointSource& b, double lambda) {
  if (lambda == 0.0) {
    require_same_names(a, b);
    return copy_as_is(a);
  }
  if (lambda == 1.0) {
    require_same_names(a, b);
    return copy_as_is(b);
  }
  const double one_minus = 1.0 - lambda;
  Checkpoint out = combine_float_checkpoints(
      a, b,
      [&](const std::string&, size_t, float av, float bv) {
        return static_cast<float>(one_minus * av + lambda * bv);
      },
      "interpolate");
  for (const auto& [k, v] : a.metadata()) out.set_metadata(k, v);
  out.set_id(a.id() + "~" + b.id());
  return out;
}

Checkpoint transfer_path(const CheckpointSource& m_s, const CheckpointSource& m_t,
                         const DiffVector& diff, double lambda) {
  require_same_names(m_s, m_t);

  auto delta_at = [&](const std::string& name, size_t k) -> float {
    auto it = diff.deltas.find(name);
    if (it == diff.deltas.end())
      raise(ErrorKind::NameSetMismatch,
            "diff vector has no entry for tensor \"" + name + "\"");
    const Tensor& d = it->second;
    return reinterpret_cast<const float*>(d.data.data())[k];
  };

  // Check the diff's alignment up front so every lambda takes the same path.
  for (const auto& [name, meta] : m_t.metas()) {
    if (!dtype_is_float(meta.dtype)) continue;
    auto it = diff.deltas.find(name);
    if (it == diff.deltas.end())
      raise(ErrorKind::NameSetMismatch,
            "diff vector has no entry for tensor \"" + name + "\"");
    if (it->second.shape != meta.shape)
      raise(ErrorKind::ShapeMismatch, "tensor \"" + name + "\" has shape " +
                                          shape_text(it->second.shape) + " in the diff but " +
                                          shape_text(meta.shape) + " in the target");
  }

  Checkpoint out;
  if (lambda == 1.0) {
    // Endpoint of the path: m_t + diff, on the same promotion path as apply_diff.
    out = combine_float_checkpoints(
        m_t, m_t,
        [&](const std::string& name, size_t k, float tv, float) {
          return tv + delta_at(name, k);
        },
        "transfer_path");
  } else if (lambda == 0.0) {
    out = combine_float_checkpoints(
        m_s, m_s,
        [&](const std::string& name, size_t k, float sv, float) {
          return sv + delta_at(name, k);
        },
        "transfer_path");
  } else {
    const double one_minus = 1.0 - lambda;
    out = combine_float_checkpoints(
        m_s, m_t,
        [&](const std::string& name, size_t k, float sv, float tv) {
          return static_cast<float>(tv + one_minus * (sv - tv) +
                                    static_cast<double>(delta_at(name, k)));
        },
        "transfer_path");
  }
  for (const auto& [k, v] : m_t.metadata()) out.set_metadata(k, v);
  out.set_id(m_t.id() + "+path");
  return out;
}

Checkpoint merge_task_vectors(const CheckpointSource& base,
                              const std::vector<DiffVector>& diffs, double lambda) {
  if (diffs.empty()) raise(ErrorKind::EmptyDiffList, "no diff vectors to merge");
  for (const auto& diff : diffs) {
    for (const auto& [name, tensor] : diff.deltas) {
      auto it = base.metas().find(name);
      if (it == base.metas().end())
        raise(ErrorKind::ShapeMismatch,
              "diff tensor \"" + name + "\" is missing from the base");
      if (it->second.shape != tensor.shape)
        raise(ErrorKind::ShapeMismatch, "tensor \"" + name + "\" has shape " +
                                            shape_text(tensor.shape) + " in a diff but " +
                                            shape_text(it->second.shape) + " in the base");
    }
  }

  std::vector<std::string> names = base.names();
  std::vector<Tensor> slots(names.size());

  parallel_for(names.size(), [&](size_t i) {
    const std::string& name = names[i];
    const TensorMeta& meta = base.metas().at(name);
    if (!dtype_is_float(meta.dtype)) {
      slots[i] = base.load(name);
      return;
    }
    const std::vector<float> bv = base.load(name).to_f32();
    std::vector<double> acc(bv.size(), 0.0);
    for (const auto& diff : diffs) {
      auto it = diff.deltas.find(name);
      if (it == diff.deltas.end()) continue;
      const float* d = reinterpret_cast<const float*>(it->second.data.data());
      for (size_t k = 0; k < acc.size(); ++k) acc[k] += static_cast<double>(d[k]);
    }
    std::vector<float> out(bv.size());
    for (size_t k = 0; k < bv.size(); ++k)
      out[k] = static_cast<float>(static_cast<double>(bv[k]) + lambda * acc[k]);
    slots[i] = Tensor::from_f32(out, meta.shape);
  });

  Checkpoint result;
  for (size_t i = 0; i < names.size(); ++i) result.add(names[i], std::move(slots[i]));
  for (const auto& [k, v] : base.metadata()) result.set_metadata(k, v);
  result.set_id(base.id() + "+merge");
  return result;
}

DiffStats diff_stats(const DiffVector& diff) {
  if (diff.empty()) raise(ErrorKind::EmptyDiffList, "cannot take stats of an empty diff");

  DiffStats stats;
  stats.per_tensor.reserve(diff.deltas.size());

  double sum_sq = 0.0;
  int64_t total = 0;
  int64_t total_zero = 0;
  for (const auto& [name, tensor] : diff.deltas) {
    const std::vector<float> v = tensor.to_f32();
    TensorStats ts;
    ts.name = name;
    double acc = 0.0;
    int64_t zeros = 0;
    for (float x : v) {
      acc += static_cast<double>(x) * static_cast<double>(x);
      ts.max_abs = std::max(ts.max_abs, static_cast<double>(std::fabs(x)));
      if (x == 0.0f) ++zeros;
    }
    ts.l2 = std::sqrt(acc);
    ts.fraction_zero = v.empty() ? 1.0 : static_cast<double>(zeros) / v.size();
    sum_sq += ts.l2 * ts.l2;
    total += static_cast<int64_t>(v.size());
    total_zero += zeros;
    stats.global_max_abs = std::max(stats.global_max_abs, ts.max_abs);
    stats.per_tensor.push_back(std::move(ts));
  }
  stats.global_l2 = std::sqrt(sum_sq);
  stats.global_fraction_zero =
      total == 0 ? 1.0 : static_cast<double>(total_zero) / static_cast<double>(total);
  return stats;
}

std::string TransferReport::to_json_string() const {
  json j;
  j["applied"] = applied;
  j["skipped_shape"] = skipped_shape;
  j["missing_in_target"] = missing_in_target;
  j["untouched"] = untouched;
  j["scale"] = scale;
  j["dtype_policy"] = dtype_policy_name(dtype_policy);
  j["output"] = output_id;
  json norms = json::object();
  for (const auto& [name, norm] : delta_norms) norms[name] = norm;
  j["delta_norms"] = std::move(norms);
  return j.dump(2);
}

std::string DiffStats::to_json_string() const {
  json j;
  j["global"] = {{"l2", global_l2},
                 {"max_abs", global_max_abs},
                 {"fraction_zero", global_fraction_zero}};
  json per = json::object();
  for (const auto& ts : per_tensor)
    per[ts.name] = {{"l2", ts.l2}, {"max_abs", ts.max_abs}, {"fraction_zero", ts.fraction_zero}};
  j["per_tensor"] = std::move(per);
  return j.dump(2);
}

void save_diff(const DiffVector& diff, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(diff.deltas.size());
  for (const auto& [name, tensor] : diff.deltas) entries.emplace_back(name, tensor);
  write_checkpoint(entries, path,
                   {{"deltaforge.kind", "diff"},
                    {"deltaforge.finetuned", diff.finetuned_id},
                    {"deltaforge.base", diff.base_id}});
}

DiffVector load_diff(const CheckpointSource& source) {
  DiffVector diff;
  const auto& meta = source.metadata();
  if (auto it = meta.find("deltaforge.finetuned"); it != meta.end())
    diff.finetuned_id = it->second;
  if (auto it = meta.find("deltaforge.base"); it != meta.end()) diff.base_id = it->second;
  for (const auto& name : source.names()) {
    Tensor t = source.load(name);
    if (!t.is_float())
      raise(ErrorKind::UnsupportedDtype,
            "diff tensor \"" + name + "\" has non-float dtype " + dtype_name(t.dtype));
    if (t.dtype != Dtype::F32) t = Tensor::from_f32(t.to_f32(), t.shape);
    diff.deltas.emplace(name, std::move(t));
  }
  return diff;
}

const char* dtype_policy_name(DtypePolicy policy) {
  return policy == DtypePolicy::PromoteF32 ? "promote-f32" : "native";
}

bool dtype_policy_from_name(const std::string& name, DtypePolicy& out) {
  if (name == "native") { out = DtypePolicy::Native; return true; }
  if (name == "promote-f32") { out = DtypePolicy::PromoteF32; return true; }
  return false;
}

}  // namespace deltaforge
