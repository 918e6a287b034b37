#include <algorithm>
#include <cmath>
#include <type_traits>

#include "autoddpm/simd.hpp"
#include "autoddpm/tensor.hpp"

namespace autoddpm::ops {
namespace {

template <class T>
void gemm_reference(std::size_t m, std::size_t n, std::size_t k, const T* a, std::ptrdiff_t a_rs,
                    std::ptrdiff_t a_cs, const T* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs, T* c,
                    std::ptrdiff_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (!accumulate) std::fill_n(crow, n, T(0));
    const T* arow = a + static_cast<std::ptrdiff_t>(i) * a_rs;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[static_cast<std::ptrdiff_t>(p) * a_cs];
      const T* brow = b + static_cast<std::ptrdiff_t>(p) * b_rs;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[static_cast<std::ptrdiff_t>(j) * b_cs];
    }
  }
}

// cols[p][(ky*k + kx)*cin + ci] for one sample.
template <class T>
void im2col(const T* x, int h, int w, int cin, int ksize, std::vector<T>& cols) {
  const int r = ksize / 2;
  const std::size_t kdim = static_cast<std::size_t>(ksize) * ksize * cin;
  cols.resize(static_cast<std::size_t>(h) * w * kdim);
  T* dst = cols.data();
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      for (int ky = 0; ky < ksize; ++ky) {
        const int sy = y + ky - r;
        for (int kx = 0; kx < ksize; ++kx) {
          const int sx = xx + kx - r;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            std::fill_n(dst, cin, T(0));
          } else {
            std::copy_n(x + (static_cast<std::size_t>(sy) * w + sx) * cin, cin, dst);
          }
          dst += cin;
        }
      }
    }
  }
}

template <class T>
void col2im_add(const std::vector<T>& cols, int h, int w, int cin, int ksize, T* dx) {
  const int r = ksize / 2;
  const T* src = cols.data();
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      for (int ky = 0; ky < ksize; ++ky) {
        const int sy = y + ky - r;
        for (int kx = 0; kx < ksize; ++kx) {
          const int sx = xx + kx - r;
          if (sy >= 0 && sy < h && sx >= 0 && sx < w) {
            T* d = dx + (static_cast<std::size_t>(sy) * w + sx) * cin;
            for (int ci = 0; ci < cin; ++ci) d[ci] += src[ci];
          }
          src += cin;
        }
      }
    }
  }
}

template <class T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

}  // namespace

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs,
          const T* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs, T* c, std::ptrdiff_t ldc, bool accumulate) {
  if constexpr (std::is_same_v<T, float>) {
    simd::GemmArgs g;
    g.m = m;
    g.n = n;
    g.k = k;
    g.a = a;
    g.a_rs = a_rs;
    g.a_cs = a_cs;
    g.b = b;
    g.b_rs = b_rs;
    g.b_cs = b_cs;
    g.c = c;
    g.ldc = ldc;
    g.accumulate = accumulate;
    simd::active().sgemm(g);
  } else {
    gemm_reference(m, n, k, a, a_rs, a_cs, b, b_rs, b_cs, c, ldc, accumulate);
  }
}

template <class T>
void conv2d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int ksize, int cout,
                    Tensor<T>& out) {
  const std::size_t kdim = static_cast<std::size_t>(ksize) * ksize * x.c;
  if (weight.size() != kdim * cout || bias.size() != static_cast<std::size_t>(cout)) {
    throw std::invalid_argument("conv2d_forward: parameter shape mismatch");
  }
  if (!(out.n == x.n && out.h == x.h && out.w == x.w && out.c == cout)) out = Tensor<T>(x.n, x.h, x.w, cout);
  const std::size_t pixels = x.pixels();
  thread_local std::vector<T> cols;
  for (int i = 0; i < x.n; ++i) {
    T* o = out.sample(i);
    for (std::size_t p = 0; p < pixels; ++p) std::copy(bias.begin(), bias.end(), o + p * cout);
    const T* a = x.sample(i);
    if (ksize != 1) {
      im2col(x.sample(i), x.h, x.w, x.c, ksize, cols);
      a = cols.data();
    }
    gemm<T>(pixels, cout, kdim, a, static_cast<std::ptrdiff_t>(kdim), 1, weight.data(), cout, 1, o, cout, true);
  }
}

template <class T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> weight, int ksize, const Tensor<T>& dout,
                     std::span<T> dweight, std::span<T> dbias, Tensor<T>* dx) {
  const int cout = dout.c;
  const std::size_t kdim = static_cast<std::size_t>(ksize) * ksize * x.c;
  const std::size_t pixels = x.pixels();
  if (dx && !dx->same_shape(x)) *dx = Tensor<T>(x.n, x.h, x.w, x.c);
  thread_local std::vector<T> cols;
  thread_local std::vector<T> dcols;
  thread_local std::vector<T> dwt;
  for (int i = 0; i < x.n; ++i) {
    const T* g = dout.sample(i);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (int co = 0; co < cout; ++co) dbias[co] += g[p * cout + co];
    }
    const T* a = x.sample(i);
    if (ksize != 1) {
      im2col(x.sample(i), x.h, x.w, x.c, ksize, cols);
      a = cols.data();
    }
    // dW^T = dout^T * cols, so the long pixel axis streams through B.
    dwt.resize(static_cast<std::size_t>(cout) * kdim);
    gemm<T>(cout, kdim, pixels, g, 1, cout, a, static_cast<std::ptrdiff_t>(kdim), 1, dwt.data(),
            static_cast<std::ptrdiff_t>(kdim), false);
    for (std::size_t kd = 0; kd < kdim; ++kd) {
      for (int co = 0; co < cout; ++co) dweight[kd * cout + co] += dwt[co * kdim + kd];
    }
    if (!dx) continue;
    if (ksize == 1) {
      gemm<T>(pixels, x.c, cout, g, cout, 1, weight.data(), 1, cout, dx->sample(i), x.c, false);
    } else {
      dcols.resize(pixels * kdim);
      gemm<T>(pixels, kdim, cout, g, cout, 1, weight.data(), 1, cout, dcols.data(),
              static_cast<std::ptrdiff_t>(kdim), false);
      T* d = dx->sample(i);
      std::fill_n(d, x.sample_size(), T(0));
      col2im_add(dcols, x.h, x.w, x.c, ksize, d);
    }
  }
}

template <class T>
void group_norm_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta, int groups,
                        Tensor<T>& out, GroupNormCache<T>& cache, double eps) {
  if (groups <= 0 || x.c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (!out.same_shape(x)) out = Tensor<T>(x.n, x.h, x.w, x.c);
  const int c = x.c;
  const int cpg = c / groups;
  const std::size_t pixels = x.pixels();
  const double count = static_cast<double>(pixels) * cpg;
  cache.mean.assign(static_cast<std::size_t>(x.n) * groups, T(0));
  cache.rstd.assign(static_cast<std::size_t>(x.n) * groups, T(0));
  std::vector<double> acc(c), gmean(c);
  std::vector<T> scale(c), shift(c);
  for (int i = 0; i < x.n; ++i) {
    const T* xs = x.sample(i);
    T* os = out.sample(i);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* v = xs + p * c;
      for (int ch = 0; ch < c; ++ch) acc[ch] += v[ch];
    }
    for (int g = 0; g < groups; ++g) {
      double s = 0.0;
      for (int k = 0; k < cpg; ++k) s += acc[g * cpg + k];
      for (int k = 0; k < cpg; ++k) gmean[g * cpg + k] = s / count;
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* v = xs + p * c;
      for (int ch = 0; ch < c; ++ch) {
        const double d = v[ch] - gmean[ch];
        acc[ch] += d * d;
      }
    }
    for (int g = 0; g < groups; ++g) {
      double ss = 0.0;
      for (int k = 0; k < cpg; ++k) ss += acc[g * cpg + k];
      const double mean = gmean[g * cpg];
      const double rstd = 1.0 / std::sqrt(ss / count + eps);
      cache.mean[i * groups + g] = static_cast<T>(mean);
      cache.rstd[i * groups + g] = static_cast<T>(rstd);
      for (int k = 0; k < cpg; ++k) {
        const int ch = g * cpg + k;
        scale[ch] = static_cast<T>(rstd * gamma[ch]);
        shift[ch] = static_cast<T>(beta[ch] - mean * rstd * gamma[ch]);
      }
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* v = xs + p * c;
      T* o = os + p * c;
      for (int ch = 0; ch < c; ++ch) o[ch] = v[ch] * scale[ch] + shift[ch];
    }
  }
}

template <class T>
void group_norm_backward(const Tensor<T>& x, std::span<const T> gamma, int groups, const GroupNormCache<T>& cache,
                         const Tensor<T>& dout, std::span<T> dgamma, std::span<T> dbeta, Tensor<T>& dx) {
  if (!dx.same_shape(x)) dx = Tensor<T>(x.n, x.h, x.w, x.c);
  const int c = x.c;
  const int cpg = c / groups;
  const std::size_t pixels = x.pixels();
  const double count = static_cast<double>(pixels) * cpg;
  std::vector<double> sum_g(c), sum_gx(c), mean(c), rstd(c), a(c), b(c);
  for (int i = 0; i < x.n; ++i) {
    const T* xs = x.sample(i);
    const T* gs = dout.sample(i);
    T* ds = dx.sample(i);
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = cache.mean[i * groups + ch / cpg];
      rstd[ch] = cache.rstd[i * groups + ch / cpg];
    }
    std::fill(sum_g.begin(), sum_g.end(), 0.0);
    std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* v = xs + p * c;
      const T* g = gs + p * c;
      for (int ch = 0; ch < c; ++ch) {
        sum_g[ch] += g[ch];
        sum_gx[ch] += static_cast<double>(g[ch]) * ((v[ch] - mean[ch]) * rstd[ch]);
      }
    }
    for (int ch = 0; ch < c; ++ch) {
      dgamma[ch] += static_cast<T>(sum_gx[ch]);
      dbeta[ch] += static_cast<T>(sum_g[ch]);
    }
    // dx = rstd * (gamma * g - m1 - xhat * m2), with m1, m2 the group means of gamma*g and gamma*g*xhat.
    for (int g = 0; g < groups; ++g) {
      double m1 = 0.0, m2 = 0.0;
      for (int k = 0; k < cpg; ++k) {
        const int ch = g * cpg + k;
        m1 += gamma[ch] * sum_g[ch];
        m2 += gamma[ch] * sum_gx[ch];
      }
      m1 /= count;
      m2 /= count;
      for (int k = 0; k < cpg; ++k) {
        const int ch = g * cpg + k;
        a[ch] = m1;
        b[ch] = m2;
      }
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      const T* v = xs + p * c;
      const T* g = gs + p * c;
      T* d = ds + p * c;
      for (int ch = 0; ch < c; ++ch) {
        const double xhat = (v[ch] - mean[ch]) * rstd[ch];
        d[ch] = static_cast<T>(rstd[ch] * (static_cast<double>(g[ch]) * gamma[ch] - a[ch] - xhat * b[ch]));
      }
    }
  }
}

template <class T>
void silu_forward(std::span<const T> x, std::span<T> out) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().silu(x.size(), x.data(), out.data());
    return;
  }
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sigmoid(x[i]);
}

template <class T>
void silu_backward(std::span<const T> x, std::span<const T> dout, std::span<T> dx) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().silu_backward(x.size(), x.data(), dout.data(), dx.data());
    return;
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = sigmoid(x[i]);
    dx[i] = dout[i] * (s * (T(1) + x[i] * (T(1) - s)));
  }
}

template <class T>
void avgpool2_forward(const Tensor<T>& x, Tensor<T>& out) {
  if (x.h % 2 != 0 || x.w % 2 != 0) throw std::invalid_argument("avgpool2: odd spatial size");
  out = Tensor<T>(x.n, x.h / 2, x.w / 2, x.c);
  for (int i = 0; i < x.n; ++i) {
    for (int y = 0; y < out.h; ++y) {
      for (int xx = 0; xx < out.w; ++xx) {
        for (int ch = 0; ch < x.c; ++ch) {
          out.at(i, y, xx, ch) = T(0.25) * (x.at(i, 2 * y, 2 * xx, ch) + x.at(i, 2 * y, 2 * xx + 1, ch) +
                                            x.at(i, 2 * y + 1, 2 * xx, ch) + x.at(i, 2 * y + 1, 2 * xx + 1, ch));
        }
      }
    }
  }
}

template <class T>
void avgpool2_backward(const Tensor<T>& dout, Tensor<T>& dx) {
  dx = Tensor<T>(dout.n, dout.h * 2, dout.w * 2, dout.c);
  for (int i = 0; i < dx.n; ++i) {
    for (int y = 0; y < dx.h; ++y) {
      for (int xx = 0; xx < dx.w; ++xx) {
        for (int ch = 0; ch < dx.c; ++ch) dx.at(i, y, xx, ch) = T(0.25) * dout.at(i, y / 2, xx / 2, ch);
      }
    }
  }
}

template <class T>
void upsample2_forward(const Tensor<T>& x, Tensor<T>& out) {
  out = Tensor<T>(x.n, x.h * 2, x.w * 2, x.c);
  for (int i = 0; i < out.n; ++i) {
    for (int y = 0; y < out.h; ++y) {
      for (int xx = 0; xx < out.w; ++xx) {
        std::copy_n(&x.at(i, y / 2, xx / 2, 0), x.c, &out.at(i, y, xx, 0));
      }
    }
  }
}

template <class T>
void upsample2_backward(const Tensor<T>& dout, Tensor<T>& dx) {
  dx = Tensor<T>(dout.n, dout.h / 2, dout.w / 2, dout.c);
  for (int i = 0; i < dout.n; ++i) {
    for (int y = 0; y < dout.h; ++y) {
      for (int xx = 0; xx < dout.w; ++xx) {
        const T* g = &dout.at(i, y, xx, 0);
        T* d = &dx.at(i, y / 2, xx / 2, 0);
        for (int ch = 0; ch < dout.c; ++ch) d[ch] += g[ch];
      }
    }
  }
}

template <class T>
void concat_forward(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: spatial mismatch");
  out = Tensor<T>(a.n, a.h, a.w, a.c + b.c);
  const std::size_t rows = static_cast<std::size_t>(a.n) * a.pixels();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data.data() + r * a.c, a.c, out.data.data() + r * out.c);
    std::copy_n(b.data.data() + r * b.c, b.c, out.data.data() + r * out.c + a.c);
  }
}

template <class T>
void concat_backward(const Tensor<T>& dout, Tensor<T>& da, Tensor<T>& db) {
  const std::size_t rows = static_cast<std::size_t>(dout.n) * dout.pixels();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(dout.data.data() + r * dout.c, da.c, da.data.data() + r * da.c);
    std::copy_n(dout.data.data() + r * dout.c + da.c, db.c, db.data.data() + r * db.c);
  }
}

template <class T>
void dense_forward(std::span<const T> x, int rows, int in, std::span<const T> weight, std::span<const T> bias,
                   int out, std::span<T> y) {
  for (int r = 0; r < rows; ++r) std::copy(bias.begin(), bias.end(), y.begin() + static_cast<std::size_t>(r) * out);
  gemm<T>(rows, out, in, x.data(), in, 1, weight.data(), out, 1, y.data(), out, true);
}

template <class T>
void dense_backward(std::span<const T> x, int rows, int in, std::span<const T> weight, int out,
                    std::span<const T> dy, std::span<T> dweight, std::span<T> dbias, std::span<T> dx) {
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out; ++o) dbias[o] += dy[static_cast<std::size_t>(r) * out + o];
  }
  gemm<T>(in, out, rows, x.data(), 1, in, dy.data(), out, 1, dweight.data(), out, true);
  if (!dx.empty()) gemm<T>(rows, in, out, dy.data(), out, 1, weight.data(), 1, out, dx.data(), in, false);
}

template <class T>
void add_channel_bias(Tensor<T>& x, std::span<const T> v) {
  const std::size_t pixels = x.pixels();
  for (int i = 0; i < x.n; ++i) {
    T* s = x.sample(i);
    const T* b = v.data() + static_cast<std::size_t>(i) * x.c;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (int ch = 0; ch < x.c; ++ch) s[p * x.c + ch] += b[ch];
    }
  }
}

template <class T>
void add_channel_bias_backward(const Tensor<T>& dout, std::span<T> dv) {
  const std::size_t pixels = dout.pixels();
  for (int i = 0; i < dout.n; ++i) {
    const T* s = dout.sample(i);
    T* d = dv.data() + static_cast<std::size_t>(i) * dout.c;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (int ch = 0; ch < dout.c; ++ch) d[ch] += s[p * dout.c + ch];
    }
  }
}

#define AUTODDPM_INSTANTIATE(T)                                                                                    \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, const T*, std::ptrdiff_t, std::ptrdiff_t, const T*, \
                        std::ptrdiff_t, std::ptrdiff_t, T*, std::ptrdiff_t, bool);                                 \
  template void conv2d_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int, int, Tensor<T>&); \
  template void conv2d_backward<T>(const Tensor<T>&, std::span<const T>, int, const Tensor<T>&, std::span<T>,      \
                                   std::span<T>, Tensor<T>*);                                                      \
  template void group_norm_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int, Tensor<T>&,   \
                                      GroupNormCache<T>&, double);                                                 \
  template void group_norm_backward<T>(const Tensor<T>&, std::span<const T>, int, const GroupNormCache<T>&,         \
                                       const Tensor<T>&, std::span<T>, std::span<T>, Tensor<T>&);                  \
  template void silu_forward<T>(std::span<const T>, std::span<T>);                                                 \
  template void silu_backward<T>(std::span<const T>, std::span<const T>, std::span<T>);                            \
  template void avgpool2_forward<T>(const Tensor<T>&, Tensor<T>&);                                                 \
  template void avgpool2_backward<T>(const Tensor<T>&, Tensor<T>&);                                                \
  template void upsample2_forward<T>(const Tensor<T>&, Tensor<T>&);                                                \
  template void upsample2_backward<T>(const Tensor<T>&, Tensor<T>&);                                               \
  template void concat_forward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                 \
  template void concat_backward<T>(const Tensor<T>&, Tensor<T>&, Tensor<T>&);                                      \
  template void dense_forward<T>(std::span<const T>, int, int, std::span<const T>, std::span<const T>, int,        \
                                 std::span<T>);                                                                    \
  template void dense_backward<T>(std::span<const T>, int, int, std::span<const T>, int, std::span<const T>,       \
                                  std::span<T>, std::span<T>, std::span<T>);                                       \
  template void add_channel_bias<T>(Tensor<T>&, std::span<const T>);                                               \
  template void add_channel_bias_backward<T>(const Tensor<T>&, std::span<T>);

AUTODDPM_INSTANTIATE(float)
AUTODDPM_INSTANTIATE(double)

#undef AUTODDPM_INSTANTIATE

}  // namespace autoddpm::ops
