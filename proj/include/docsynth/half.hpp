#pragma once

#include <cstdint>

namespace docsynth {

// Software IEEE binary16 and bfloat16 conversions. The toolchain has no
// native 16-bit float types, so these are the only path in and out.
// Narrowing rounds to nearest, ties to even; NaN stays NaN.

float half_to_float(std::uint16_t bits) noexcept;
std::uint16_t float_to_half(float value) noexcept;

float bf16_to_float(std::uint16_t bits) noexcept;
std::uint16_t float_to_bf16(float value) noexcept;

}  // namespace docsynth
