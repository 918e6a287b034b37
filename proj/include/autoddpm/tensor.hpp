#pragma once
// Batched NHWC activations and the layer primitives of the denoiser, each
// with a hand-derived backward pass. Instantiated for float (SIMD GEMM) and
// double (scalar; used for finite-difference gradient checks).

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace autoddpm {

template <class T>
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int h_, int w_, int c_, T fill = T{}) : n(n_), h(h_), w(w_), c(c_) {
    data.assign(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill);
  }
  std::size_t size() const noexcept { return data.size(); }
  std::size_t pixels() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const noexcept { return pixels() * static_cast<std::size_t>(c); }
  T* sample(int i) noexcept { return data.data() + i * sample_size(); }
  const T* sample(int i) const noexcept { return data.data() + i * sample_size(); }
  T& at(int ni, int y, int x, int ci) noexcept {
    return data[((static_cast<std::size_t>(ni) * h + y) * w + x) * c + ci];
  }
  const T& at(int ni, int y, int x, int ci) const noexcept {
    return data[((static_cast<std::size_t>(ni) * h + y) * w + x) * c + ci];
  }
  bool same_shape(const Tensor& o) const noexcept { return n == o.n && h == o.h && w == o.w && c == o.c; }
};

namespace ops {

// C[m x n] (+)= A(i,k) B(k,j) with strided operands; float dispatches to the
// active SIMD GEMM.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::ptrdiff_t a_rs, std::ptrdiff_t a_cs,
          const T* b, std::ptrdiff_t b_rs, std::ptrdiff_t b_cs, T* c, std::ptrdiff_t ldc, bool accumulate);

// Square convolution, stride 1, zero padding ksize/2. Weight layout is
// [ky][kx][cin][cout] (a (k*k*cin) x cout matrix), bias [cout].
template <class T>
void conv2d_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int ksize,
                    int cout, Tensor<T>& out);
// Accumulates into dweight/dbias; writes dx when non-null.
template <class T>
void conv2d_backward(const Tensor<T>& x, std::span<const T> weight, int ksize, const Tensor<T>& dout,
                     std::span<T> dweight, std::span<T> dbias, Tensor<T>* dx);

template <class T>
struct GroupNormCache {
  std::vector<T> mean, rstd;  // [n * groups]
};
template <class T>
void group_norm_forward(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta, int groups,
                        Tensor<T>& out, GroupNormCache<T>& cache, double eps = 1e-5);
template <class T>
void group_norm_backward(const Tensor<T>& x, std::span<const T> gamma, int groups, const GroupNormCache<T>& cache,
                         const Tensor<T>& dout, std::span<T> dgamma, std::span<T> dbeta, Tensor<T>& dx);

// x * sigmoid(x)
template <class T>
void silu_forward(std::span<const T> x, std::span<T> out);
template <class T>
void silu_backward(std::span<const T> x, std::span<const T> dout, std::span<T> dx);

template <class T>
void avgpool2_forward(const Tensor<T>& x, Tensor<T>& out);
template <class T>
void avgpool2_backward(const Tensor<T>& dout, Tensor<T>& dx);
template <class T>
void upsample2_forward(const Tensor<T>& x, Tensor<T>& out);
template <class T>
void upsample2_backward(const Tensor<T>& dout, Tensor<T>& dx);

// Channel concatenation [a | b].
template <class T>
void concat_forward(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out);
template <class T>
void concat_backward(const Tensor<T>& dout, Tensor<T>& da, Tensor<T>& db);

// y[rows x out] = x[rows x in] W[in x out] + b
template <class T>
void dense_forward(std::span<const T> x, int rows, int in, std::span<const T> weight, std::span<const T> bias,
                   int out, std::span<T> y);
template <class T>
void dense_backward(std::span<const T> x, int rows, int in, std::span<const T> weight, int out,
                    std::span<const T> dy, std::span<T> dweight, std::span<T> dbias, std::span<T> dx);

// x[ni, :, :, ci] += v[ni * c + ci]
template <class T>
void add_channel_bias(Tensor<T>& x, std::span<const T> v);
// dv[ni * c + ci] += sum over pixels of dout
template <class T>
void add_channel_bias_backward(const Tensor<T>& dout, std::span<T> dv);

}  // namespace ops
}  // namespace autoddpm
