#pragma once
// Linear-variance Gaussian diffusion: schedule tables plus the forward
// (noising) and reverse (denoising) kernels, independent of any denoiser.
// Timesteps are 1-based, t in [1, t_max]; alpha_bar(0) is defined as 1.

#include <cmath>
#include <cstddef>
#include <type_traits>
#include <utility>
#include <vector>

#include "autoddpm/image.hpp"
#include "autoddpm/random.hpp"
#include "autoddpm/simd.hpp"

namespace autoddpm {

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int t_max() const noexcept { return t_max_; }
  double beta(int t) const { return beta_.at(check(t)); }
  double alpha(int t) const { return alpha_.at(check(t)); }
  // Accepts t = 0 (returns 1).
  double alpha_bar(int t) const;
  double posterior_var(int t) const { return posterior_var_.at(check(t)); }
  double beta_first() const noexcept { return beta_[1]; }
  double beta_last() const noexcept { return beta_[t_max_]; }

  // Throws std::out_of_range unless 1 <= t <= t_max.
  int check(int t) const;

  friend NoiseSchedule make_schedule(int t_max, double beta_1, double beta_T);

 private:
  int t_max_ = 0;
  // Index 0 is a sentinel so that table[t] matches the 1-based timestep.
  std::vector<double> beta_, alpha_, alpha_bar_, posterior_var_;
};

// beta grows linearly from beta_1 at t=1 to beta_T at t=t_max.
NoiseSchedule make_schedule(int t_max = 1000, double beta_1 = 1e-4, double beta_T = 0.02);

namespace detail {

// out = a*x + b*y
template <class T>
void axpby(const Plane<T>& x, double a, const Plane<T>& y, double b, Plane<T>& out) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().axpby(x.size(), static_cast<float>(a), x.data(), static_cast<float>(b), y.data(), out.data());
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(a * x[i] + b * y[i]);
  }
}

template <class T>
void axpbypcz(const Plane<T>& x, double a, const Plane<T>& y, double b, const Plane<T>& z, double c,
              Plane<T>& out) {
  if constexpr (std::is_same_v<T, float>) {
    simd::active().axpbypcz(x.size(), static_cast<float>(a), x.data(), static_cast<float>(b), y.data(),
                            static_cast<float>(c), z.data(), out.data());
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<T>(a * x[i] + b * y[i] + c * z[i]);
  }
}

template <class T>
Plane<T> standard_normal_like(const Plane<T>& x, RandomSource& rng) {
  Plane<T> z(x.height(), x.width());
  rng.fill_normal(z.values());
  return z;
}

}  // namespace detail

// One forward step q(x_t | x_{t-1}): sqrt(1-beta_t) x_prev + sqrt(beta_t) z.
template <class T>
Plane<T> forward_step(const NoiseSchedule& s, const Plane<T>& x_prev, int t, RandomSource& rng) {
  const double beta = s.beta(t);
  const Plane<T> z = detail::standard_normal_like(x_prev, rng);
  Plane<T> out(x_prev.height(), x_prev.width());
  detail::axpby(x_prev, std::sqrt(1.0 - beta), z, std::sqrt(beta), out);
  return out;
}

template <class T>
struct NoisedSample {
  Plane<T> x_t;
  Plane<T> eps;
};

// Closed-form jump q(x_t | x_0): returns x_t together with the noise used.
template <class T>
NoisedSample<T> forward_to(const NoiseSchedule& s, const Plane<T>& x0, int t, RandomSource& rng) {
  const double ab = s.alpha_bar(s.check(t));
  NoisedSample<T> r{Plane<T>(x0.height(), x0.width()), detail::standard_normal_like(x0, rng)};
  detail::axpby(x0, std::sqrt(ab), r.eps, std::sqrt(1.0 - ab), r.x_t);
  return r;
}

// mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
template <class T>
Plane<T> predict_mu(const NoiseSchedule& s, const Plane<T>& x_t, int t, const Plane<T>& eps_hat) {
  require_same_shape(x_t, eps_hat, "predict_mu");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
  const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  Plane<T> out(x_t.height(), x_t.width());
  detail::axpby(x_t, inv_sqrt_alpha, eps_hat, -inv_sqrt_alpha * eps_coef, out);
  return out;
}

// Ancestral step p(x_{t-1} | x_t) with the fixed posterior variance. The
// final step (t = 1) returns the mean and draws no noise.
template <class T>
Plane<T> reverse_step(const NoiseSchedule& s, const Plane<T>& x_t, int t, const Plane<T>& eps_hat,
                      RandomSource& rng) {
  require_same_shape(x_t, eps_hat, "reverse_step");
  s.check(t);
  if (t == 1) return predict_mu(s, x_t, t, eps_hat);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
  const double eps_coef = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  const Plane<T> z = detail::standard_normal_like(x_t, rng);
  Plane<T> out(x_t.height(), x_t.width());
  detail::axpbypcz(x_t, inv_sqrt_alpha, eps_hat, -inv_sqrt_alpha * eps_coef, z, std::sqrt(s.posterior_var(t)),
                   out);
  return out;
}

// Pixel-mean squared error between true and predicted noise.
template <class T>
double simple_loss(const Plane<T>& eps, const Plane<T>& eps_hat) {
  require_same_shape(eps, eps_hat, "simple_loss");
  if (eps.empty()) return 0.0;
  double acc = 0.0;
  if constexpr (std::is_same_v<T, float>) {
    acc = simd::active().sum_sq_diff(eps.size(), eps.data(), eps_hat.data());
  } else {
    for (std::size_t i = 0; i < eps.size(); ++i) {
      const double d = static_cast<double>(eps[i]) - static_cast<double>(eps_hat[i]);
      acc += d * d;
    }
  }
  return acc / static_cast<double>(eps.size());
}

}  // namespace autoddpm
