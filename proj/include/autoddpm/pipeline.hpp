#pragma once
// AutoDDPM: mask from an initial AnoDDPM reconstruction, stitch the masked
// pseudo-healthy content into the noised original, re-sample, and gate the
// final residual map with the initial one. The plain AnoDDPM baseline is
// anoddpm_reconstruct + anomaly_heatmap.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoddpm/denoiser.hpp"
#include "autoddpm/diffusion.hpp"
#include "autoddpm/image.hpp"
#include "autoddpm/metrics.hpp"

namespace autoddpm {

struct PipelineConfig {
  int t_mask = 200;
  int t_stitch = 50;
  int n_resample = 5;  // jump-backs per timestep; each step runs n_resample + 1 denoise passes
  int dilation_kernel = 3;
  double binarize_quantile = 0.70;
  double norm_percentile = 95.0;
  bool use_uncertainty = true;

  // Throws std::invalid_argument unless 1 <= t_stitch <= t_mask <= t_max,
  // n_resample >= 0, the kernel is odd and positive and 0 <= quantile <= 1.
  void validate(int t_max) const;
};

// Noise x to t_start in one jump, then run the reverse chain to t = 0.
// Output clamped to [0, 1].
Image anoddpm_reconstruct(const Image& x, const Denoiser& denoiser, const NoiseSchedule& schedule, int t_start,
                          RandomSource& rng);
// Same result per image as anoddpm_reconstruct(xs[i], ..., rngs[i]); the
// denoiser sees all images of a timestep in one batch.
std::vector<Image> anoddpm_reconstruct_batch(std::span<const Image> xs, const Denoiser& denoiser,
                                             const NoiseSchedule& schedule, int t_start,
                                             std::span<RandomSource> rngs);

// r / percentile_p(r), clipped to [0, 1]; all zeros when the percentile is 0.
Heatmap norm_p(const Heatmap& r, double p);

// norm_p(|xhat - x|) * perceptual(xhat, x), elementwise.
Heatmap anomaly_heatmap(const Image& x, const Image& xhat, const PerceptualDistance& perceptual = default_perceptual(),
                        double p = 95.0);

// Square k x k structuring element, clipped at the border. k odd.
BinaryMask dilate(const BinaryMask& m, int k);

// 1 where h >= the quantile-th quantile of the nonzero scores.
BinaryMask binarize(const Heatmap& h, double quantile);

// xhat0 inside the mask, x outside: the composite before any diffusion.
Image naive_stitch(const Image& x, const Image& xhat0, const BinaryMask& m);

// Masked reverse chain from t_stitch with re-sampling. Outside the mask the
// result is x exactly. The context noise uses a child stream seeded by the
// first draw of rng; everything else (initial noising, reverse steps,
// jump-backs) draws from rng in chain order.
Image stitch_resample(const Image& x, const Image& xhat0, const BinaryMask& m, const Denoiser& denoiser,
                      const NoiseSchedule& schedule, const PipelineConfig& cfg, RandomSource& rng);
std::vector<Image> stitch_resample_batch(std::span<const Image> xs, std::span<const Image> xhat0s,
                                         std::span<const BinaryMask> masks, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, const PipelineConfig& cfg,
                                         std::span<RandomSource> rngs);

Heatmap final_anomaly_map(const Image& x, const Image& x_ph, const Heatmap& initial,
                          const PerceptualDistance& perceptual, bool use_uncertainty, double p = 95.0);

// Stream seeds of one detection: the initial reconstruction at level t uses
// stage_seed(seed, 1, t), so an AnoDDPM(t) run with the same seed yields the
// same x_hat0; stitching uses stage_seed(seed, 2, 0).
std::uint64_t stage_seed(std::uint64_t seed, int stage, int t);

struct DetectionTimings {
  double reconstruct_ms = 0.0;
  double mask_ms = 0.0;
  double stitch_ms = 0.0;
  double final_ms = 0.0;
};

struct DetectionResult {
  Image input;
  Image initial_reconstruction;  // x_hat0
  Heatmap initial_heatmap;
  BinaryMask mask;
  Image ph_reconstruction;  // x_ph
  Heatmap final_map;
  PipelineConfig config;
  std::uint64_t seed = 0;
  DetectionTimings timings;
};

struct DetectOptions {
  const PerceptualDistance* perceptual = nullptr;  // default_perceptual() when null
  // Replaces the binarized, dilated mask.
  std::optional<BinaryMask> forced_mask;
  // Skips stage 1 when the caller already holds x_hat0 for stage_seed(seed, 1, t_mask).
  std::optional<Image> initial_reconstruction;
};

DetectionResult detect(const Image& x, const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const PipelineConfig& cfg, std::uint64_t seed, const DetectOptions& options = {});

// Batched detect; options[i] (if given) applies to image i. Identical to
// running detect per image.
std::vector<DetectionResult> detect_batch(std::span<const Image> xs, const Denoiser& denoiser,
                                          const NoiseSchedule& schedule, const PipelineConfig& cfg,
                                          std::span<const std::uint64_t> seeds,
                                          std::span<const DetectOptions> options = {});

// Writes input, x_hat0, heatmaps, mask and x_ph as image/mask files, a PGM
// preview strip and metadata.json (config, seed, timings).
void save_detection(const DetectionResult& r, const std::filesystem::path& dir);

}  // namespace autoddpm
