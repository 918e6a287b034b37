#pragma once
// Data-parallel inner loops with a scalar reference implementation and
// an AVX2/FMA variant. The variant is chosen once at startup from CPUID and
// can be forced through the AUTODDPM_SIMD environment variable
// ("scalar" or "avx2") or set_active_isa().

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace autoddpm::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

// Best ISA supported by this CPU and this build.
Isa detected_isa() noexcept;
Isa active_isa() noexcept;
// Throws std::invalid_argument if the requested ISA is unavailable.
void set_active_isa(Isa isa);
bool isa_available(Isa isa) noexcept;

// C[i*ldc + j] (+)= sum_k A(i,k) * B(k,j), where A(i,k) = a[i*a_rs + k*a_cs]
// and B(k,j) = b[k*b_rs + j*b_cs]. Strides express transposes.
struct GemmArgs {
  std::size_t m = 0, n = 0, k = 0;
  const float* a = nullptr;
  std::ptrdiff_t a_rs = 0, a_cs = 0;
  const float* b = nullptr;
  std::ptrdiff_t b_rs = 0, b_cs = 0;
  float* c = nullptr;
  std::ptrdiff_t ldc = 0;
  bool accumulate = false;
};

struct Kernels {
  void (*sgemm)(const GemmArgs& args);
  // out = a*x + b*y
  void (*axpby)(std::size_t n, float a, const float* x, float b, const float* y, float* out);
  // out = a*x + b*y + c*z
  void (*axpbypcz)(std::size_t n, float a, const float* x, float b, const float* y, float c,
                   const float* z, float* out);
  // out = mask ? inside : outside (exact selection, no arithmetic)
  void (*select)(std::size_t n, const std::uint8_t* mask, const float* inside,
                 const float* outside, float* out);
  // out = x * y
  void (*mul)(std::size_t n, const float* x, const float* y, float* out);
  // Sums are accumulated in double.
  double (*sum)(std::size_t n, const float* x);
  double (*sum_sq)(std::size_t n, const float* x);
  double (*sum_sq_diff)(std::size_t n, const float* x, const float* y);
  // out[i] = sum_j w[j] * x[i*stride + j*step] for j in [0, taps), i in [0, n):
  // a correlation along one axis used by separable filters.
  void (*fir)(std::size_t n, const float* x, std::ptrdiff_t stride, std::ptrdiff_t step,
              const float* w, std::size_t taps, float* out);
  // out = x * sigmoid(x)
  void (*silu)(std::size_t n, const float* x, float* out);
  // dx = dout * d/dx[x * sigmoid(x)]
  void (*silu_backward)(std::size_t n, const float* x, const float* dout, float* dx);
};

const Kernels& kernels(Isa isa);
const Kernels& active() noexcept;

}  // namespace autoddpm::simd
