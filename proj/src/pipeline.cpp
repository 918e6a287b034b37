#include "autoddpm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "autoddpm/image_io.hpp"
#include "autoddpm/simd.hpp"

namespace autoddpm {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void require_unit_range(const Image& x, const char* what) {
  for (const float v : x.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument(std::string(what) + ": input must lie in [0, 1]");
  }
}

// One reverse step for every chain in xs at timestep t.
void reverse_all(std::vector<Image>& xs, int t, const Denoiser& denoiser, const NoiseSchedule& schedule,
                 std::span<RandomSource> rngs) {
  std::vector<Image> eps(xs.size());
  denoiser.predict_eps_batch(xs, t, eps);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = reverse_step(schedule, xs[i], t, eps[i], rngs[i]);
}

Image select(const BinaryMask& m, const Image& inside, const Image& outside) {
  Image out(inside.height(), inside.width());
  simd::active().select(out.size(), m.data(), inside.data(), outside.data(), out.data());
  return out;
}

}  // namespace

void PipelineConfig::validate(int t_max) const {
  if (!(1 <= t_stitch && t_stitch <= t_mask && t_mask <= t_max)) {
    throw std::invalid_argument("PipelineConfig: need 1 <= t_stitch <= t_mask <= t_max (got t_stitch=" +
                                std::to_string(t_stitch) + ", t_mask=" + std::to_string(t_mask) +
                                ", t_max=" + std::to_string(t_max) + ")");
  }
  if (n_resample < 0) throw std::invalid_argument("PipelineConfig: n_resample must be >= 0");
  if (dilation_kernel < 1 || dilation_kernel % 2 == 0) {
    throw std::invalid_argument("PipelineConfig: dilation_kernel must be odd and >= 1");
  }
  if (!(binarize_quantile >= 0.0 && binarize_quantile <= 1.0)) {
    throw std::invalid_argument("PipelineConfig: binarize_quantile must lie in [0, 1]");
  }
  if (!(norm_percentile > 0.0 && norm_percentile < 100.0)) {
    throw std::invalid_argument("PipelineConfig: norm_percentile must lie in (0, 100)");
  }
}

Image anoddpm_reconstruct(const Image& x, const Denoiser& denoiser, const NoiseSchedule& schedule, int t_start,
                          RandomSource& rng) {
  auto out = anoddpm_reconstruct_batch(std::span<const Image>(&x, 1), denoiser, schedule, t_start,
                                       std::span<RandomSource>(&rng, 1));
  return std::move(out[0]);
}

std::vector<Image> anoddpm_reconstruct_batch(std::span<const Image> xs, const Denoiser& denoiser,
                                             const NoiseSchedule& schedule, int t_start,
                                             std::span<RandomSource> rngs) {
  if (xs.size() != rngs.size()) throw std::invalid_argument("anoddpm_reconstruct: one RandomSource per image");
  schedule.check(t_start);
  std::vector<Image> cur;
  cur.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require_unit_range(xs[i], "anoddpm_reconstruct");
    cur.push_back(forward_to(schedule, xs[i], t_start, rngs[i]).x_t);
  }
  for (int t = t_start; t >= 1; --t) reverse_all(cur, t, denoiser, schedule, rngs);
  for (auto& c : cur) c = clamp01(std::move(c));
  return cur;
}

Heatmap norm_p(const Heatmap& r, double p) {
  if (!(p > 0.0 && p < 100.0)) throw std::invalid_argument("norm_p: p must lie in (0, 100)");
  Heatmap out(r.height(), r.width(), 0.0f);
  if (r.empty()) return out;
  const double q = percentile(r.values(), p);
  if (!(q > 0.0)) return out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(static_cast<double>(r[i]) / q, 0.0, 1.0));
  }
  return out;
}

Heatmap anomaly_heatmap(const Image& x, const Image& xhat, const PerceptualDistance& perceptual, double p) {
  require_same_shape(x, xhat, "anomaly_heatmap");
  Heatmap residual(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) residual[i] = std::abs(xhat[i] - x[i]);
  const Heatmap normed = norm_p(residual, p);
  const Heatmap lp = perceptual.per_pixel(xhat, x);
  Heatmap out(x.height(), x.width());
  simd::active().mul(out.size(), normed.data(), lp.data(), out.data());
  return out;
}

BinaryMask dilate(const BinaryMask& m, int k) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("dilate: kernel size must be odd and >= 1");
  const int r = k / 2, h = m.height(), w = m.width();
  // Separable: a square element is a row pass followed by a column pass.
  BinaryMask rows(h, w, std::uint8_t{0}), out(h, w, std::uint8_t{0});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!m(y, x)) continue;
      for (int dx = std::max(0, x - r); dx <= std::min(w - 1, x + r); ++dx) rows(y, dx) = 1;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!rows(y, x)) continue;
      for (int dy = std::max(0, y - r); dy <= std::min(h - 1, y + r); ++dy) out(dy, x) = 1;
    }
  }
  return out;
}

BinaryMask binarize(const Heatmap& h, double quantile) {
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw std::invalid_argument("binarize: quantile must lie in [0, 1]");
  BinaryMask out(h.height(), h.width(), std::uint8_t{0});
  std::vector<float> nonzero;
  for (const float v : h.values()) {
    if (v > 0.0f) nonzero.push_back(v);
  }
  if (nonzero.empty()) return out;
  const double tau = percentile(nonzero, 100.0 * quantile);
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] > 0.0f && h[i] >= tau ? 1 : 0;
  return out;
}

Image naive_stitch(const Image& x, const Image& xhat0, const BinaryMask& m) {
  require_same_shape(x, xhat0, "naive_stitch");
  require_same_shape(x, m, "naive_stitch");
  return select(m, xhat0, x);
}

Image stitch_resample(const Image& x, const Image& xhat0, const BinaryMask& m, const Denoiser& denoiser,
                      const NoiseSchedule& schedule, const PipelineConfig& cfg, RandomSource& rng) {
  auto out = stitch_resample_batch(std::span<const Image>(&x, 1), std::span<const Image>(&xhat0, 1),
                                   std::span<const BinaryMask>(&m, 1), denoiser, schedule, cfg,
                                   std::span<RandomSource>(&rng, 1));
  return std::move(out[0]);
}

std::vector<Image> stitch_resample_batch(std::span<const Image> xs, std::span<const Image> xhat0s,
                                         std::span<const BinaryMask> masks, const Denoiser& denoiser,
                                         const NoiseSchedule& schedule, const PipelineConfig& cfg,
                                         std::span<RandomSource> rngs) {
  cfg.validate(schedule.t_max());
  const std::size_t n = xs.size();
  if (xhat0s.size() != n || masks.size() != n || rngs.size() != n) {
    throw std::invalid_argument("stitch_resample: inputs, reconstructions, masks and rngs must align");
  }
  std::vector<RandomSource> ctx_rngs;
  ctx_rngs.reserve(n);
  std::vector<Image> cur;
  cur.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_same_shape(xs[i], xhat0s[i], "stitch_resample");
    require_same_shape(xs[i], masks[i], "stitch_resample");
    ctx_rngs.emplace_back(rngs[i].next_u64());
    cur.push_back(forward_to(schedule, select(masks[i], xhat0s[i], xs[i]), cfg.t_stitch, rngs[i]).x_t);
  }
  std::vector<Image> eps(n);
  for (int t = cfg.t_stitch; t >= 1; --t) {
    const int passes = t > 1 ? cfg.n_resample + 1 : 1;
    for (int r = 0; r < passes; ++r) {
      denoiser.predict_eps_batch(cur, t, eps);
      for (std::size_t i = 0; i < n; ++i) {
        const Image ph = reverse_step(schedule, cur[i], t, eps[i], rngs[i]);
        if (t > 1) {
          const Image ctx = forward_to(schedule, xs[i], t - 1, ctx_rngs[i]).x_t;
          cur[i] = select(masks[i], ph, ctx);
        } else {
          cur[i] = select(masks[i], ph, xs[i]);
        }
        if (r + 1 < passes) cur[i] = forward_step(schedule, cur[i], t, rngs[i]);
      }
    }
  }
  for (auto& c : cur) c = clamp01(std::move(c));
  return cur;
}

Heatmap final_anomaly_map(const Image& x, const Image& x_ph, const Heatmap& initial,
                          const PerceptualDistance& perceptual, bool use_uncertainty, double p) {
  require_same_shape(x, x_ph, "final_anomaly_map");
  require_same_shape(x, initial, "final_anomaly_map");
  Heatmap h = anomaly_heatmap(x, x_ph, perceptual, p);
  if (use_uncertainty) simd::active().mul(h.size(), h.data(), initial.data(), h.data());
  return h;
}

std::uint64_t stage_seed(std::uint64_t seed, int stage, int t) {
  return mix_seed(seed, {static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(t)});
}

DetectionResult detect(const Image& x, const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const PipelineConfig& cfg, std::uint64_t seed, const DetectOptions& options) {
  auto out = detect_batch(std::span<const Image>(&x, 1), denoiser, schedule, cfg,
                          std::span<const std::uint64_t>(&seed, 1), std::span<const DetectOptions>(&options, 1));
  return std::move(out[0]);
}

std::vector<DetectionResult> detect_batch(std::span<const Image> xs, const Denoiser& denoiser,
                                          const NoiseSchedule& schedule, const PipelineConfig& cfg,
                                          std::span<const std::uint64_t> seeds,
                                          std::span<const DetectOptions> options) {
  cfg.validate(schedule.t_max());
  const std::size_t n = xs.size();
  if (seeds.size() != n) throw std::invalid_argument("detect: one seed per image");
  if (!options.empty() && options.size() != n) throw std::invalid_argument("detect: options must align with images");
  static const DetectOptions kDefault;
  const auto opt = [&](std::size_t i) -> const DetectOptions& { return options.empty() ? kDefault : options[i]; };
  const auto lp = [&](std::size_t i) -> const PerceptualDistance& {
    return opt(i).perceptual ? *opt(i).perceptual : default_perceptual();
  };

  std::vector<DetectionResult> res(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_unit_range(xs[i], "detect");
    res[i].input = xs[i];
    res[i].config = cfg;
    res[i].seed = seeds[i];
  }

  // Stage 1: initial reconstructions for images that do not bring one.
  auto t0 = Clock::now();
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < n; ++i) {
    if (opt(i).initial_reconstruction) {
      require_same_shape(*opt(i).initial_reconstruction, xs[i], "detect");
      res[i].initial_reconstruction = *opt(i).initial_reconstruction;
    } else {
      todo.push_back(i);
    }
  }
  if (!todo.empty()) {
    std::vector<Image> batch;
    std::vector<RandomSource> rngs;
    for (const std::size_t i : todo) {
      batch.push_back(xs[i]);
      rngs.emplace_back(stage_seed(seeds[i], 1, cfg.t_mask));
    }
    auto rec = anoddpm_reconstruct_batch(batch, denoiser, schedule, cfg.t_mask, rngs);
    for (std::size_t k = 0; k < todo.size(); ++k) res[todo[k]].initial_reconstruction = std::move(rec[k]);
  }
  const double stage1_ms = ms_since(t0) / static_cast<double>(std::max<std::size_t>(n, 1));

  // Stage 2: heatmap and mask.
  t0 = Clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    res[i].initial_heatmap = anomaly_heatmap(xs[i], res[i].initial_reconstruction, lp(i), cfg.norm_percentile);
    if (opt(i).forced_mask) {
      require_same_shape(*opt(i).forced_mask, xs[i], "detect");
      res[i].mask = *opt(i).forced_mask;
    } else {
      res[i].mask = dilate(binarize(res[i].initial_heatmap, cfg.binarize_quantile), cfg.dilation_kernel);
    }
  }
  const double stage2_ms = ms_since(t0) / static_cast<double>(std::max<std::size_t>(n, 1));

  // Stage 3: stitch and re-sample.
  t0 = Clock::now();
  {
    std::vector<Image> rec;
    std::vector<BinaryMask> masks;
    std::vector<RandomSource> rngs;
    for (std::size_t i = 0; i < n; ++i) {
      rec.push_back(res[i].initial_reconstruction);
      masks.push_back(res[i].mask);
      rngs.emplace_back(stage_seed(seeds[i], 2, 0));
    }
    auto ph = stitch_resample_batch(xs, rec, masks, denoiser, schedule, cfg, rngs);
    for (std::size_t i = 0; i < n; ++i) res[i].ph_reconstruction = std::move(ph[i]);
  }
  const double stage3_ms = ms_since(t0) / static_cast<double>(std::max<std::size_t>(n, 1));

  t0 = Clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    res[i].final_map = final_anomaly_map(xs[i], res[i].ph_reconstruction, res[i].initial_heatmap, lp(i),
                                         cfg.use_uncertainty, cfg.norm_percentile);
  }
  const double stage4_ms = ms_since(t0) / static_cast<double>(std::max<std::size_t>(n, 1));
  for (auto& r : res) r.timings = {stage1_ms, stage2_ms, stage3_ms, stage4_ms};
  return res;
}

void save_detection(const DetectionResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_image(dir / "input.adim", r.input);
  save_image(dir / "initial_reconstruction.adim", r.initial_reconstruction);
  save_image(dir / "initial_heatmap.adim", r.initial_heatmap);
  save_mask(dir / "mask.admk", r.mask);
  save_image(dir / "ph_reconstruction.adim", r.ph_reconstruction);
  save_image(dir / "final_map.adim", r.final_map);
  const Image panels[] = {r.input, r.initial_reconstruction, r.initial_heatmap, plane_cast<float>(r.mask),
                          r.ph_reconstruction, r.final_map};
  save_pgm_panels(dir / "panels.pgm", panels);
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["height"] = r.input.height();
  j["width"] = r.input.width();
  j["config"] = {{"t_mask", r.config.t_mask},
                 {"t_stitch", r.config.t_stitch},
                 {"n_resample", r.config.n_resample},
                 {"dilation_kernel", r.config.dilation_kernel},
                 {"binarize_quantile", r.config.binarize_quantile},
                 {"norm_percentile", r.config.norm_percentile},
                 {"use_uncertainty", r.config.use_uncertainty}};
  j["mask_pixels"] = popcount(r.mask);
  j["timings_ms"] = {{"reconstruct", r.timings.reconstruct_ms},
                     {"mask", r.timings.mask_ms},
                     {"stitch", r.timings.stitch_ms},
                     {"final", r.timings.final_ms}};
  write_text_file(dir / "metadata.json", j.dump(2) + "\n");
}

}  // namespace autoddpm
