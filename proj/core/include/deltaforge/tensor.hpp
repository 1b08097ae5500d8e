// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "deltaforge/dtype.hpp"
#include "deltaforge/errors.hpp"

namespace deltaforge {

// Dense dtype-tagged array. Bytes are little-endian, row-major contiguous,
// exactly as stored in the container format. An empty shape denotes a scalar.
struct Tensor {
  Dtype dtype{Dtype::F32};
  std::vector<int64_t> shape;
  std::vector<std::byte> data;

  int64_t element_count() const {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
  }

  size_t byte_size() const { return data.size(); }

  bool is_float() const { return dtype_is_float(dtype); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  // Promotes a floating tensor to a flat F32 buffer (F64 values are narrowed).
  // Throws InvalidArgument for non-float dtypes.
  std::vector<float> to_f32() const;

  // Full-precision view used by the toy trainer.
  std::vector<double> to_f64() const;

  static Tensor zeros(Dtype dtype, std::vector<int64_t> shape);
  static Tensor from_f32(std::span<const float> values, std::vector<int64_t> shape);
  static Tensor from_f64(std::span<const double> values, std::vector<int64_t> shape);
  static Tensor from_i64(std::span<const int64_t> values, std::vector<int64_t> shape);
  static Tensor from_i32(std::span<const int32_t> values, std::vector<int64_t> shape);

  // Casts a flat F32 buffer into a tensor of dtype `target` (floats only),
  // rounding to nearest even for F16/BF16.
  static Tensor cast_from_f32(std::span<const float> values, Dtype target,
                              std::vector<int64_t> shape);
};

inline bool bytes_equal(const Tensor& a, const Tensor& b) {
  return a.dtype == b.dtype && a.shape == b.shape && a.data == b.data;
}

}  // namespace deltaforge
