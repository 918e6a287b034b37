#pragma once

#include <memory>
#include <span>
#include <vector>

#include "autoddpm/diffusion.hpp"
#include "autoddpm/image.hpp"
#include "autoddpm/unet.hpp"

namespace autoddpm {

// eps_theta(x_t, t). Implementations are read-only after construction and
// safe to call concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  // Batched prediction; out.size() == x_t.size(), each output shaped like its input.
  virtual void predict_eps_batch(std::span<const Image> x_t, int t, std::span<Image> out) const = 0;

  Image predict_eps(const Image& x_t, int t) const {
    Image out;
    predict_eps_batch(std::span<const Image>(&x_t, 1), t, std::span<Image>(&out, 1));
    return out;
  }
};

// Exact E[eps | x_t] for isotropic Gaussian data x0 ~ N(mu0, sigma0_sq I).
struct AnalyticGaussianDenoiser {
  Image mu0;
  double sigma0_sq = 0.0;
};

template <class T>
Plane<T> analytic_predict_eps(const AnalyticGaussianDenoiser& d, const NoiseSchedule& s, const Plane<T>& x_t,
                              int t) {
  require_same_shape(d.mu0, x_t, "analytic_predict_eps");
  const double ab = s.alpha_bar(s.check(t));
  const double sab = std::sqrt(ab);
  const double denom = ab * d.sigma0_sq + 1.0 - ab;
  const double inv_s1m = 1.0 / std::sqrt(1.0 - ab);
  Plane<T> out(x_t.height(), x_t.width());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double xt = x_t[i];
    const double x0_mean = (sab * d.sigma0_sq * xt + (1.0 - ab) * d.mu0[i]) / denom;
    out[i] = static_cast<T>((xt - sab * x0_mean) * inv_s1m);
  }
  return out;
}

class AnalyticDenoiser final : public Denoiser {
 public:
  AnalyticDenoiser(AnalyticGaussianDenoiser model, NoiseSchedule schedule);
  void predict_eps_batch(std::span<const Image> x_t, int t, std::span<Image> out) const override;
  const AnalyticGaussianDenoiser& model() const noexcept { return model_; }

 private:
  AnalyticGaussianDenoiser model_;
  NoiseSchedule schedule_;
};

class UNetDenoiser final : public Denoiser {
 public:
  UNetDenoiser(UNetParams<float> params, int t_max);
  void predict_eps_batch(std::span<const Image> x_t, int t, std::span<Image> out) const override;
  const UNetParams<float>& params() const noexcept { return params_; }

 private:
  UNetParams<float> params_;
  UNetModel<float> model_;
  int t_max_;
};

}  // namespace autoddpm
