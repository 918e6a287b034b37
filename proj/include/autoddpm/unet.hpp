#pragma once
// Small U-Net noise predictor eps_theta(x_t, t).
//
// Layout for levels = channel_mult.size():
//   conv_in(3x3, in -> base)
//   encoder level l: blocks_per_level residual blocks at base*mult[l] channels,
//                    followed by 2x2 average pooling except at the last level
//   decoder level l (from levels-2 down to 0): nearest 2x upsampling, channel
//                    concatenation with the encoder output of level l, then
//                    blocks_per_level residual blocks at base*mult[l]
//   head: group-norm, SiLU, conv_out(3x3, -> in)
// Residual block: GN -> SiLU -> conv3x3 -> (+ timestep projection) -> GN ->
// SiLU -> conv3x3, plus identity or 1x1 skip. The timestep enters as a
// sinusoidal embedding passed through one dense + SiLU layer, then a
// per-block dense projection to the block's channel count.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "autoddpm/image.hpp"
#include "autoddpm/random.hpp"
#include "autoddpm/tensor.hpp"

namespace autoddpm {

struct UNetConfig {
  int in_channels = 1;
  int base_channels = 16;
  std::vector<int> channel_mult{1, 2};
  int blocks_per_level = 2;
  int temb_dim = 32;
  int norm_groups = 8;

  int levels() const noexcept { return static_cast<int>(channel_mult.size()); }
  // Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  std::string describe() const;
  // Hash of describe(); identifies compatible checkpoints.
  std::uint64_t arch_hash() const;
  // Required divisor of input height and width.
  int size_divisor() const noexcept { return 1 << levels(); }
};

template <class T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;
};

template <class T>
struct UNetParams {
  UNetConfig config;
  std::vector<ParamTensor<T>> tensors;

  std::size_t parameter_count() const;
  std::uint64_t arch_hash() const { return config.arch_hash(); }
  const ParamTensor<T>& get(const std::string& name) const;
  ParamTensor<T>& get(const std::string& name);
  // Same structure, all values zero.
  UNetParams zeros_like() const;
  friend bool operator==(const UNetParams& a, const UNetParams& b) {
    if (a.tensors.size() != b.tensors.size() || a.arch_hash() != b.arch_hash()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
      if (a.tensors[i].name != b.tensors[i].name || a.tensors[i].shape != b.tensors[i].shape ||
          a.tensors[i].data != b.tensors[i].data) {
        return false;
      }
    }
    return true;
  }
};

struct UNetInitOptions {
  // Output convolution starts at zero, so the untrained network predicts
  // eps = 0 everywhere.
  bool zero_output = true;
};

// Conv and dense weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)), biases 0,
// norm gains 1 and shifts 0.
UNetParams<float> unet_init(const UNetConfig& config, RandomSource& rng, UNetInitOptions options = {});

template <class To, class From>
UNetParams<To> convert_params(const UNetParams<From>& p) {
  UNetParams<To> out;
  out.config = p.config;
  for (const auto& t : p.tensors) out.tensors.push_back({t.name, t.shape, std::vector<To>(t.data.begin(), t.data.end())});
  return out;
}

// Sinusoidal embedding of a timestep, width dim (even).
template <class T>
void timestep_embedding(int t, int dim, std::span<T> out);

// Parameter-index layout derived from a UNetConfig (defined in unet.cpp).
struct UNetPlan;

template <class T>
class UNetModel {
 public:
  explicit UNetModel(const UNetConfig& config);

  const UNetConfig& config() const noexcept { return config_; }

  // x: [n, h, w, in_channels]; t: one timestep per sample.
  void predict(const UNetParams<T>& params, const Tensor<T>& x, std::span<const int> t, Tensor<T>& out) const;

  // Returns sum over samples and pixels of (eps_hat - eps)^2 and accumulates
  // d(loss_scale * that sum)/d(params) into grad.
  double loss_and_grad(const UNetParams<T>& params, const Tensor<T>& x, std::span<const int> t,
                       const Tensor<T>& eps, double loss_scale, UNetParams<T>& grad) const;

  const UNetPlan& plan() const noexcept { return *plan_; }

 private:
  UNetConfig config_;
  std::shared_ptr<const UNetPlan> plan_;
};

// Single-image convenience wrapper: output has the shape of x_t. Throws
// std::out_of_range unless 1 <= t <= t_max and std::invalid_argument when
// the image size is not divisible by config.size_divisor().
Image unet_predict_eps(const UNetParams<float>& params, const Image& x_t, int t, int t_max = 1000);

}  // namespace autoddpm
