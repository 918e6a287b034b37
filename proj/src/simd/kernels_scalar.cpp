// Scalar reference kernels. These define the semantics every SIMD variant
// is tested against.

#include <cmath>

#include "kernels_impl.hpp"

namespace autoddpm::simd::detail {
namespace {

void sgemm_scalar(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    float* crow = g.c + static_cast<std::ptrdiff_t>(i) * g.ldc;
    if (!g.accumulate) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0f;
    }
    const float* arow = g.a + static_cast<std::ptrdiff_t>(i) * g.a_rs;
    for (std::size_t p = 0; p < g.k; ++p) {
      const float av = arow[static_cast<std::ptrdiff_t>(p) * g.a_cs];
      if (av == 0.0f) continue;
      const float* brow = g.b + static_cast<std::ptrdiff_t>(p) * g.b_rs;
      for (std::size_t j = 0; j < g.n; ++j) {
        crow[j] += av * brow[static_cast<std::ptrdiff_t>(j) * g.b_cs];
      }
    }
  }
}

void axpby_scalar(std::size_t n, float a, const float* x, float b, const float* y, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void axpbypcz_scalar(std::size_t n, float a, const float* x, float b, const float* y, float c,
                     const float* z, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i] + c * z[i];
}

void select_scalar(std::size_t n, const std::uint8_t* mask, const float* inside,
                   const float* outside, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? inside[i] : outside[i];
}

void mul_scalar(std::size_t n, const float* x, const float* y, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

double sum_scalar(std::size_t n, const float* x) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double sum_sq_scalar(std::size_t n, const float* x) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * x[i];
  return s;
}

double sum_sq_diff_scalar(std::size_t n, const float* x, const float* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    s += d * d;
  }
  return s;
}

void fir_scalar(std::size_t n, const float* x, std::ptrdiff_t stride, std::ptrdiff_t step,
                const float* w, std::size_t taps, float* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const float* base = x + static_cast<std::ptrdiff_t>(i) * stride;
    float acc = 0.0f;
    for (std::size_t j = 0; j < taps; ++j) acc += w[j] * base[static_cast<std::ptrdiff_t>(j) * step];
    out[i] = acc;
  }
}

void silu_scalar(std::size_t n, const float* x, float* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward_scalar(std::size_t n, const float* x, const float* dout, float* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    dx[i] = dout[i] * (s * (1.0f + x[i] * (1.0f - s)));
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels k{sgemm_scalar,  axpby_scalar,  axpbypcz_scalar,    select_scalar, mul_scalar,
                         sum_scalar,    sum_sq_scalar, sum_sq_diff_scalar, fir_scalar,
                         silu_scalar,   silu_backward_scalar};
  return k;
}

}  // namespace autoddpm::simd::detail
