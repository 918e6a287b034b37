#include "autoddpm/denoiser.hpp"

#include <algorithm>
#include <stdexcept>

namespace autoddpm {

AnalyticDenoiser::AnalyticDenoiser(AnalyticGaussianDenoiser model, NoiseSchedule schedule)
    : model_(std::move(model)), schedule_(std::move(schedule)) {
  if (model_.sigma0_sq < 0.0) throw std::invalid_argument("AnalyticDenoiser: sigma0_sq must be >= 0");
}

void AnalyticDenoiser::predict_eps_batch(std::span<const Image> x_t, int t, std::span<Image> out) const {
  if (x_t.size() != out.size()) throw std::invalid_argument("predict_eps_batch: output count mismatch");
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = analytic_predict_eps(model_, schedule_, x_t[i], t);
}

UNetDenoiser::UNetDenoiser(UNetParams<float> params, int t_max)
    : params_(std::move(params)), model_(params_.config), t_max_(t_max) {}

void UNetDenoiser::predict_eps_batch(std::span<const Image> x_t, int t, std::span<Image> out) const {
  if (x_t.size() != out.size()) throw std::invalid_argument("predict_eps_batch: output count mismatch");
  if (t < 1 || t > t_max_) throw std::out_of_range("UNetDenoiser: timestep out of range");
  if (x_t.empty()) return;
  const int h = x_t[0].height(), w = x_t[0].width();
  for (const auto& x : x_t) require_same_shape(x, x_t[0], "UNetDenoiser");
  // Chunked so activations stay cache-sized; every sample is computed
  // independently, so the chunk size does not change results.
  constexpr std::size_t kChunk = 8;
  Tensor<float> in, pred;
  for (std::size_t start = 0; start < x_t.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, x_t.size() - start);
    in = Tensor<float>(static_cast<int>(n), h, w, 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(x_t[start + i].data(), x_t[start + i].size(), in.sample(static_cast<int>(i)));
    }
    const std::vector<int> ts(n, t);
    model_.predict(params_, in, ts, pred);
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pred.sample(static_cast<int>(i));
      out[start + i] = Image(h, w, std::vector<float>(p, p + pred.sample_size()));
    }
  }
}

}  // namespace autoddpm
