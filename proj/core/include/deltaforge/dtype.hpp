// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace deltaforge {

// Element types of the tensor container format. Names match the on-disk
// dtype strings ("F32", "BF16", ...).
enum class Dtype : uint8_t { F64, F32, F16, BF16, I64, I32, I8, U8, Bool };

constexpr size_t dtype_width(Dtype d) {
  switch (d) {
    case Dtype::F64: return 8;
    case Dtype::F32: return 4;
    case Dtype::F16: return 2;
    case Dtype::BF16: return 2;
    case Dtype::I64: return 8;
    case Dtype::I32: return 4;
    case Dtype::I8: return 1;
    case Dtype::U8: return 1;
    case Dtype::Bool: return 1;
  }
  return 0;
}

constexpr bool dtype_is_float(Dtype d) {
  return d == Dtype::F64 || d == Dtype::F32 || d == Dtype::F16 || d == Dtype::BF16;
}

const char* dtype_name(Dtype d);

// Returns false when `name` is not a known dtype string.
bool dtype_from_name(const std::string& name, Dtype& out);

// IEEE binary16 <-> binary32, round to nearest even on narrowing.
float f16_to_f32(uint16_t bits);
uint16_t f32_to_f16(float value);

// bfloat16 <-> binary32, round to nearest even on narrowing.
float bf16_to_f32(uint16_t bits);
uint16_t f32_to_bf16(float value);

}  // namespace deltaforge
