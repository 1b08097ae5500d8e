// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/tensor.hpp"

#include <bit>

static_assert(std::endian::native == std::endian::little,
              "the container format is little-endian; big-endian hosts are unsupported");

namespace deltaforge {

namespace {

template <typename T>
std::vector<std::byte> pack(std::span<const T> values) {
  std::vector<std::byte> out(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

void check_count(size_t values, const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  if (static_cast<int64_t>(values) != n)
    raise(ErrorKind::InvalidArgument, "value count does not match shape");
}

}  // namespace

std::vector<float> Tensor::to_f32() const {
  if (!is_float())
    raise(ErrorKind::InvalidArgument,
          std::string("cannot promote ") + dtype_name(dtype) + " tensor to F32");
  const size_t n = static_cast<size_t>(element_count());
  std::vector<float> out(n);
  switch (dtype) {
    case Dtype::F32:
      if (n) std::memcpy(out.data(), data.data(), n * 4);
      break;
    case Dtype::F64: {
      const double* src = reinterpret_cast<const double*>(data.data());
      for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(src[i]);
      break;
    }
    case Dtype::F16: {
      const uint16_t* src = reinterpret_cast<const uint16_t*>(data.data());
      for (size_t i = 0; i < n; ++i) out[i] = f16_to_f32(src[i]);
      break;
    }
    case Dtype::BF16: {
      const uint16_t* src = reinterpret_cast<const uint16_t*>(data.data());
      for (size_t i = 0; i < n; ++i) out[i] = bf16_to_f32(src[i]);
      break;
    }
    default:
      break;
  }
  return out;
}

std::vector<double> Tensor::to_f64() const {
  if (dtype == Dtype::F64) {
    const size_t n = static_cast<size_t>(element_count());
    std::vector<double> out(n);
    if (n) std::memcpy(out.data(), data.data(), n * 8);
    return out;
  }
  std::vector<float> f = to_f32();
  return std::vector<double>(f.begin(), f.end());
}

Tensor Tensor::zeros(Dtype dtype, std::vector<int64_t> shape) {
  Tensor t;
  t.dtype = dtype;
  t.shape = std::move(shape);
  t.data.assign(static_cast<size_t>(t.element_count()) * dtype_width(dtype), std::byte{0});
  return t;
}

Tensor Tensor::from_f32(std::span<const float> values, std::vector<int64_t> shape) {
  check_count(values.size(), shape);
  Tensor t;
  t.dtype = Dtype::F32;
  t.shape = std::move(shape);
  t.data = pack(values);
  return t;
}

Tensor Tensor::from_f64(std::span<const double> values, std::vector<int64_t> shape) {
  check_count(values.size(), shape);
  Tensor t;
  t.dtype = Dtype::F64;
  t.shape = std::move(shape);
  t.data = pack(values);
  return t;
}

Tensor Tensor::from_i64(std::span<const int64_t> values, std::vector<int64_t> shape) {
  check_count(values.size(), shape);
  Tensor t;
  t.dtype = Dtype::I64;
  t.shape = std::move(shape);
  t.data = pack(values);
  return t;
}

Tensor Tensor::from_i32(std::span<const int32_t> values, std::vector<int64_t> shape) {
  check_count(values.size(), shape);
  Tensor t;
  t.dtype = Dtype::I32;
  t.shape = std::move(shape);
  t.data = pack(values);
  return t;
}

Tensor Tensor::cast_from_f32(std::span<const float> values, Dtype target,
                             std::vector<int64_t> shape) {
  check_count(values.size(), shape);
  if (!dtype_is_float(target))
    raise(ErrorKind::InvalidArgument,
          std::string("cannot cast F32 values to ") + dtype_name(target));
  Tensor t;
  t.dtype = target;
  t.shape = std::move(shape);
  const size_t n = values.size();
  t.data.resize(n * dtype_width(target));
  switch (target) {
    case Dtype::F32:
      if (n) std::memcpy(t.data.data(), values.data(), n * 4);
      break;
    case Dtype::F64: {
      double* dst = reinterpret_cast<double*>(t.data.data());
      for (size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(values[i]);
      break;
    }
    case Dtype::F16: {
      uint16_t* dst = reinterpret_cast<uint16_t*>(t.data.data());
      for (size_t i = 0; i < n; ++i) dst[i] = f32_to_f16(values[i]);
      break;
    }
    case Dtype::BF16: {
      uint16_t* dst = reinterpret_cast<uint16_t*>(t.data.data());
      for (size_t i = 0; i < n; ++i) dst[i] = f32_to_bf16(values[i]);
      break;
    }
    default:
      break;
  }
  return t;
}

}  // namespace deltaforge
