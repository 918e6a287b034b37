// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached after the
// dispatcher has confirmed CPU support.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "kernels_impl.hpp"

namespace autoddpm::simd::detail {
namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 120;  // multiple of kMr
constexpr std::size_t kNc = 512;  // multiple of kNr

// Packs an mc x kc block of A into row panels of kMr, k-major, zero padded.
void pack_a(const GemmArgs& g, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc,
            float* dst) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < kMr; ++r) {
        float v = 0.0f;
        if (r < rows) {
          v = g.a[static_cast<std::ptrdiff_t>(i0 + ir + r) * g.a_rs +
                  static_cast<std::ptrdiff_t>(p0 + p) * g.a_cs];
        }
        *dst++ = v;
      }
    }
  }
}

// Packs a kc x nc block of B into column panels of kNr, k-major, zero padded.
void pack_b(const GemmArgs& g, std::size_t p0, std::size_t kc, std::size_t j0, std::size_t nc,
            float* dst) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      const float* brow = g.b + static_cast<std::ptrdiff_t>(p0 + p) * g.b_rs;
      if (cols == kNr && g.b_cs == 1) {
        std::memcpy(dst, brow + j0 + jr, kNr * sizeof(float));
        dst += kNr;
        continue;
      }
      for (std::size_t c = 0; c < kNr; ++c) {
        *dst++ = c < cols ? brow[static_cast<std::ptrdiff_t>(j0 + jr + c) * g.b_cs] : 0.0f;
      }
    }
  }
}

// 6x16 register tile: acc += Apanel * Bpanel, then C (+)= acc.
void micro_kernel(std::size_t kc, const float* ap, const float* bp, float* c, std::ptrdiff_t ldc,
                  std::size_t rows, std::size_t cols, bool overwrite) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    ap += kMr;
    bp += kNr;
  }
  alignas(32) float tile[kMr][kNr];
  _mm256_store_ps(tile[0], c00);
  _mm256_store_ps(tile[0] + 8, c01);
  _mm256_store_ps(tile[1], c10);
  _mm256_store_ps(tile[1] + 8, c11);
  _mm256_store_ps(tile[2], c20);
  _mm256_store_ps(tile[2] + 8, c21);
  _mm256_store_ps(tile[3], c30);
  _mm256_store_ps(tile[3] + 8, c31);
  _mm256_store_ps(tile[4], c40);
  _mm256_store_ps(tile[4] + 8, c41);
  _mm256_store_ps(tile[5], c50);
  _mm256_store_ps(tile[5] + 8, c51);
  for (std::size_t r = 0; r < rows; ++r) {
    float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    if (cols == kNr) {
      if (overwrite) {
        _mm256_storeu_ps(crow, _mm256_load_ps(tile[r]));
        _mm256_storeu_ps(crow + 8, _mm256_load_ps(tile[r] + 8));
      } else {
        _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
        _mm256_storeu_ps(crow + 8,
                         _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = overwrite ? tile[r][j] : crow[j] + tile[r][j];
    }
  }
}

// Same tile as micro_kernel but reads A straight from rows with unit column
// stride. Rows past `rows` alias the last valid row and are discarded.
void micro_kernel_rows(std::size_t kc, const float* a, std::ptrdiff_t lda, const float* bp, float* c,
                       std::ptrdiff_t ldc, std::size_t rows, std::size_t cols, bool overwrite) {
  const float* r0 = a;
  const float* r1 = a + (rows > 1 ? 1 : 0) * lda;
  const float* r2 = a + (rows > 2 ? 2 : rows - 1) * lda;
  const float* r3 = a + (rows > 3 ? 3 : rows - 1) * lda;
  const float* r4 = a + (rows > 4 ? 4 : rows - 1) * lda;
  const float* r5 = a + (rows > 5 ? 5 : rows - 1) * lda;
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 v = _mm256_broadcast_ss(r0 + p);
    c00 = _mm256_fmadd_ps(v, b0, c00);
    c01 = _mm256_fmadd_ps(v, b1, c01);
    v = _mm256_broadcast_ss(r1 + p);
    c10 = _mm256_fmadd_ps(v, b0, c10);
    c11 = _mm256_fmadd_ps(v, b1, c11);
    v = _mm256_broadcast_ss(r2 + p);
    c20 = _mm256_fmadd_ps(v, b0, c20);
    c21 = _mm256_fmadd_ps(v, b1, c21);
    v = _mm256_broadcast_ss(r3 + p);
    c30 = _mm256_fmadd_ps(v, b0, c30);
    c31 = _mm256_fmadd_ps(v, b1, c31);
    v = _mm256_broadcast_ss(r4 + p);
    c40 = _mm256_fmadd_ps(v, b0, c40);
    c41 = _mm256_fmadd_ps(v, b1, c41);
    v = _mm256_broadcast_ss(r5 + p);
    c50 = _mm256_fmadd_ps(v, b0, c50);
    c51 = _mm256_fmadd_ps(v, b1, c51);
    bp += kNr;
  }
  alignas(32) float tile[kMr][kNr];
  _mm256_store_ps(tile[0], c00);
  _mm256_store_ps(tile[0] + 8, c01);
  _mm256_store_ps(tile[1], c10);
  _mm256_store_ps(tile[1] + 8, c11);
  _mm256_store_ps(tile[2], c20);
  _mm256_store_ps(tile[2] + 8, c21);
  _mm256_store_ps(tile[3], c30);
  _mm256_store_ps(tile[3] + 8, c31);
  _mm256_store_ps(tile[4], c40);
  _mm256_store_ps(tile[4] + 8, c41);
  _mm256_store_ps(tile[5], c50);
  _mm256_store_ps(tile[5] + 8, c51);
  for (std::size_t r = 0; r < rows; ++r) {
    float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
    if (cols == kNr) {
      if (overwrite) {
        _mm256_storeu_ps(crow, _mm256_load_ps(tile[r]));
        _mm256_storeu_ps(crow + 8, _mm256_load_ps(tile[r] + 8));
      } else {
        _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), _mm256_load_ps(tile[r])));
        _mm256_storeu_ps(crow + 8,
                         _mm256_add_ps(_mm256_loadu_ps(crow + 8), _mm256_load_ps(tile[r] + 8)));
      }
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = overwrite ? tile[r][j] : crow[j] + tile[r][j];
    }
  }
}

void sgemm_avx2(const GemmArgs& g) {
  if (g.m == 0 || g.n == 0) return;
  if (g.k == 0) {
    if (!g.accumulate) {
      for (std::size_t i = 0; i < g.m; ++i) {
        std::fill_n(g.c + static_cast<std::ptrdiff_t>(i) * g.ldc, g.n, 0.0f);
      }
    }
    return;
  }
  thread_local std::vector<float> abuf;
  thread_local std::vector<float> bbuf;
  abuf.resize(kMc * kKc);
  bbuf.resize(kKc * kNc);

  for (std::size_t j0 = 0; j0 < g.n; j0 += kNc) {
    const std::size_t nc = std::min(kNc, g.n - j0);
    for (std::size_t p0 = 0; p0 < g.k; p0 += kKc) {
      const std::size_t kc = std::min(kKc, g.k - p0);
      const bool overwrite = !g.accumulate && p0 == 0;
      pack_b(g, p0, kc, j0, nc, bbuf.data());
      for (std::size_t i0 = 0; i0 < g.m; i0 += kMc) {
        const std::size_t mc = std::min(kMc, g.m - i0);
        if (g.a_cs == 1) {
          for (std::size_t jr = 0; jr < nc; jr += kNr) {
            const float* bp = bbuf.data() + (jr / kNr) * kc * kNr;
            const std::size_t cols = std::min(kNr, nc - jr);
            for (std::size_t ir = 0; ir < mc; ir += kMr) {
              const float* a = g.a + static_cast<std::ptrdiff_t>(i0 + ir) * g.a_rs + static_cast<std::ptrdiff_t>(p0);
              float* c = g.c + static_cast<std::ptrdiff_t>(i0 + ir) * g.ldc +
                         static_cast<std::ptrdiff_t>(j0 + jr);
              micro_kernel_rows(kc, a, g.a_rs, bp, c, g.ldc, std::min(kMr, mc - ir), cols, overwrite);
            }
          }
          continue;
        }
        pack_a(g, i0, mc, p0, kc, abuf.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const float* bp = bbuf.data() + (jr / kNr) * kc * kNr;
          const std::size_t cols = std::min(kNr, nc - jr);
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const float* ap = abuf.data() + (ir / kMr) * kc * kMr;
            float* c = g.c + static_cast<std::ptrdiff_t>(i0 + ir) * g.ldc +
                       static_cast<std::ptrdiff_t>(j0 + jr);
            micro_kernel(kc, ap, bp, c, g.ldc, std::min(kMr, mc - ir), cols, overwrite);
          }
        }
      }
    }
  }
}

void axpby_avx2(std::size_t n, float a, const float* x, float b, const float* y, float* out) {
  const __m256 va = _mm256_set1_ps(a), vb = _mm256_set1_ps(b);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 r = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_mul_ps(vb, _mm256_loadu_ps(y + i)));
    _mm256_storeu_ps(out + i, r);
  }
  for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void axpbypcz_avx2(std::size_t n, float a, const float* x, float b, const float* y, float c,
                   const float* z, float* out) {
  const __m256 va = _mm256_set1_ps(a), vb = _mm256_set1_ps(b), vc = _mm256_set1_ps(c);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 r = _mm256_mul_ps(vc, _mm256_loadu_ps(z + i));
    r = _mm256_fmadd_ps(vb, _mm256_loadu_ps(y + i), r);
    r = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), r);
    _mm256_storeu_ps(out + i, r);
  }
  for (; i < n; ++i) out[i] = a * x[i] + b * y[i] + c * z[i];
}

void select_avx2(std::size_t n, const std::uint8_t* mask, const float* inside, const float* outside,
                 float* out) {
  std::size_t i = 0;
  const __m256i zero = _mm256_setzero_si256();
  for (; i + 8 <= n; i += 8) {
    const __m128i m8 = _mm_loadl_epi64(reinterpret_cast<const __m128i*>(mask + i));
    const __m256i m32 = _mm256_cvtepu8_epi32(m8);
    const __m256 is_zero = _mm256_castsi256_ps(_mm256_cmpeq_epi32(m32, zero));
    const __m256 r = _mm256_blendv_ps(_mm256_loadu_ps(inside + i), _mm256_loadu_ps(outside + i), is_zero);
    _mm256_storeu_ps(out + i, r);
  }
  for (; i < n; ++i) out[i] = mask[i] ? inside[i] : outside[i];
}

void mul_avx2(std::size_t n, const float* x, const float* y, float* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double sum_avx2(std::size_t n, const float* x) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm_loadu_ps(x + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm_loadu_ps(x + i + 4)));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double sum_sq_avx2(std::size_t n, const float* x) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d a = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
    const __m256d b = _mm256_cvtps_pd(_mm_loadu_ps(x + i + 4));
    acc0 = _mm256_fmadd_pd(a, a, acc0);
    acc1 = _mm256_fmadd_pd(b, b, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(x[i]) * x[i];
  return s;
}

double sum_sq_diff_avx2(std::size_t n, const float* x, const float* y) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d a = _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(x + i)), _mm256_cvtps_pd(_mm_loadu_ps(y + i)));
    const __m256d b =
        _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(x + i + 4)), _mm256_cvtps_pd(_mm_loadu_ps(y + i + 4)));
    acc0 = _mm256_fmadd_pd(a, a, acc0);
    acc1 = _mm256_fmadd_pd(b, b, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    s += d * d;
  }
  return s;
}

void fir_avx2(std::size_t n, const float* x, std::ptrdiff_t stride, std::ptrdiff_t step, const float* w,
              std::size_t taps, float* out) {
  std::size_t i = 0;
  if (stride == 1) {
    for (; i + 8 <= n; i += 8) {
      const float* base = x + i;
      __m256 acc = _mm256_setzero_ps();
      for (std::size_t j = 0; j < taps; ++j) {
        acc = _mm256_fmadd_ps(_mm256_set1_ps(w[j]), _mm256_loadu_ps(base + static_cast<std::ptrdiff_t>(j) * step),
                              acc);
      }
      _mm256_storeu_ps(out + i, acc);
    }
  }
  for (; i < n; ++i) {
    const float* base = x + static_cast<std::ptrdiff_t>(i) * stride;
    float acc = 0.0f;
    for (std::size_t j = 0; j < taps; ++j) acc += w[j] * base[static_cast<std::ptrdiff_t>(j) * step];
    out[i] = acc;
  }
}

// exp(x) for x clamped to [-87, 87]: x = n ln2 + r, exp(r) by a degree-6
// polynomial, 2^n assembled in the exponent field. Max relative error ~2 ulp.
__m256 exp256(__m256 x) {
  x = _mm256_min_ps(_mm256_max_ps(x, _mm256_set1_ps(-87.0f)), _mm256_set1_ps(87.0f));
  const __m256 n = _mm256_round_ps(_mm256_mul_ps(x, _mm256_set1_ps(1.44269504088896341f)),
                                   _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256 r = _mm256_fnmadd_ps(n, _mm256_set1_ps(0.693359375f), x);
  r = _mm256_fnmadd_ps(n, _mm256_set1_ps(-2.12194440e-4f), r);
  __m256 p = _mm256_set1_ps(1.9875691500e-4f);
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.3981999507e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(8.3334519073e-3f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(4.1665795894e-2f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(1.6666665459e-1f));
  p = _mm256_fmadd_ps(p, r, _mm256_set1_ps(5.0000001201e-1f));
  p = _mm256_fmadd_ps(p, _mm256_mul_ps(r, r), _mm256_add_ps(r, _mm256_set1_ps(1.0f)));
  const __m256i e = _mm256_slli_epi32(_mm256_add_epi32(_mm256_cvtps_epi32(n), _mm256_set1_epi32(127)), 23);
  return _mm256_mul_ps(p, _mm256_castsi256_ps(e));
}

void silu_avx2(std::size_t n, const float* x, float* out) {
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 e = exp256(_mm256_sub_ps(_mm256_setzero_ps(), v));
    _mm256_storeu_ps(out + i, _mm256_div_ps(v, _mm256_add_ps(one, e)));
  }
  for (; i < n; ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_backward_avx2(std::size_t n, const float* x, const float* dout, float* dx) {
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 s = _mm256_div_ps(one, _mm256_add_ps(one, exp256(_mm256_sub_ps(_mm256_setzero_ps(), v))));
    const __m256 d = _mm256_mul_ps(s, _mm256_fmadd_ps(v, _mm256_sub_ps(one, s), one));
    _mm256_storeu_ps(dx + i, _mm256_mul_ps(_mm256_loadu_ps(dout + i), d));
  }
  for (; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    dx[i] = dout[i] * (s * (1.0f + x[i] * (1.0f - s)));
  }
}

}  // namespace

const Kernels& avx2_kernels() {
  static const Kernels k{sgemm_avx2, axpby_avx2,  axpbypcz_avx2,    select_avx2, mul_avx2,
                         sum_avx2,   sum_sq_avx2, sum_sq_diff_avx2, fir_avx2,
                         silu_avx2,  silu_backward_avx2};
  return k;
}

}  // namespace autoddpm::simd::detail
