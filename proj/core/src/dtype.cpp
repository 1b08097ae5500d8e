// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/dtype.hpp"

#include <bit>
#include <cmath>

namespace deltaforge {

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F64: return "F64";
    case Dtype::F32: return "F32";
    case Dtype::F16: return "F16";
    case Dtype::BF16: return "BF16";
    case Dtype::I64: return "I64";
    case Dtype::I32: return "I32";
    case Dtype::I8: return "I8";
    case Dtype::U8: return "U8";
    case Dtype::Bool: return "BOOL";
  }
  return "?";
}

bool dtype_from_name(const std::string& name, Dtype& out) {
  if (name == "F64") { out = Dtype::F64; return true; }
  if (name == "F32") { out = Dtype::F32; return true; }
  if (name == "F16") { out = Dtype::F16; return true; }
  if (name == "BF16") { out = Dtype::BF16; return true; }
  if (name == "I64") { out = Dtype::I64; return true; }
  if (name == "I32") { out = Dtype::I32; return true; }
  if (name == "I8") { out = Dtype::I8; return true; }
  if (name == "U8") { out = Dtype::U8; return true; }
  if (name == "BOOL") { out = Dtype::Bool; return true; }
  return false;
}

float f16_to_f32(uint16_t bits) {
  const uint32_t sign = static_cast<uint32_t>(bits >> 15) & 1u;
  const uint32_t exp = static_cast<uint32_t>(bits >> 10) & 0x1fu;
  const uint32_t frac = bits & 0x3ffu;

  uint32_t out;
  if (exp == 0) {
    if (frac == 0) {
      out = sign << 31;  // signed zero
    } else {
      // subnormal: frac * 2^-24 == (frac << shift) / 1024 * 2^-(14 + shift)
      int shift = 0;
      uint32_t f = frac;
      while ((f & 0x400u) == 0) {
        f <<= 1;
        ++shift;
      }
      f &= 0x3ffu;
      const uint32_t e32 = 127 - 14 - static_cast<uint32_t>(shift);
      out = (sign << 31) | (e32 << 23) | (f << 13);
    }
  } else if (exp == 0x1f) {
    out = (sign << 31) | 0x7f800000u | (frac << 13);  // inf / nan, payload kept
  } else {
    const uint32_t e32 = exp - 15 + 127;
    out = (sign << 31) | (e32 << 23) | (frac << 13);
  }
  return std::bit_cast<float>(out);
}

uint16_t f32_to_f16(float value) {
  const uint32_t bits = std::bit_cast<uint32_t>(value);
  const uint32_t sign = (bits >> 16) & 0x8000u;
  const uint32_t exp = (bits >> 23) & 0xffu;
  const uint32_t frac = bits & 0x7fffffu;

  if (exp == 0xff) {
    // inf / nan; keep a nonzero mantissa for nan
    uint16_t payload = static_cast<uint16_t>(frac >> 13);
    if (frac != 0 && payload == 0) payload = 1;
    return static_cast<uint16_t>(sign | 0x7c00u | payload);
  }

  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1f) {
    return static_cast<uint16_t>(sign | 0x7c00u);  // overflow -> inf
  }
  if (e <= 0) {
    // subnormal or underflow to zero
    if (e < -10) return static_cast<uint16_t>(sign);
    uint32_t mant = frac | 0x800000u;
    const int shift = 14 - e;  // in [14, 24]
    uint32_t half = mant >> shift;
    const uint32_t rem = mant & ((1u << shift) - 1);
    const uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<uint16_t>(sign | half);
  }

  // normal range: round mantissa to 10 bits, nearest even
  uint32_t mant = frac;
  uint32_t half = mant >> 13;
  const uint32_t rem = mant & 0x1fffu;
  uint32_t e16 = static_cast<uint32_t>(e);
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) {
    ++half;
    if (half == 0x400u) {
      half = 0;
      ++e16;
      if (e16 >= 0x1f) return static_cast<uint16_t>(sign | 0x7c00u);
    }
  }
  return static_cast<uint16_t>(sign | (e16 << 10) | half);
}

float bf16_to_f32(uint16_t bits) {
  return std::bit_cast<float>(static_cast<uint32_t>(bits) << 16);
}

uint16_t f32_to_bf16(float value) {
  uint32_t bits = std::bit_cast<uint32_t>(value);
  if (std::isnan(value)) {
    uint16_t h = static_cast<uint16_t>(bits >> 16);
    return static_cast<uint16_t>(h | 0x0040u);  // quiet, keep sign
  }
  const uint32_t rounding = 0x7fffu + ((bits >> 16) & 1u);
  bits += rounding;
  return static_cast<uint16_t>(bits >> 16);
}

}  // namespace deltaforge
