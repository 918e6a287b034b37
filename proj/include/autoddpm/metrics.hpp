#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "autoddpm/image.hpp"

namespace autoddpm {

// Linear-interpolation percentile (the "linear" rule of numpy.percentile):
// sorted v, position p/100 * (n-1). p in [0, 100]; throws on empty input.
double percentile(std::span<const float> values, double p);

// Pixel mean of squared differences.
double mse(const Image& a, const Image& b);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Local SSIM map on a Gaussian window. Near the border the window is cut to
// the image and renormalized, so the map has the full image size. Throws
// std::invalid_argument when the image is smaller than the window.
Heatmap ssim_map(const Image& a, const Image& b, const SsimParams& params = {});
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual Heatmap per_pixel(const Image& a, const Image& b) const = 0;
  virtual double scalar(const Image& a, const Image& b) const;
  virtual std::string name() const = 0;
};

// Training-free stand-in for a learned perceptual metric. At scales 1, 1/2
// and 1/4 (2x2 average pooling) it forms two maps in [0, 1]:
//   (1 - s) / 2 with s = (cov + C3) / (sqrt(var_a var_b) + C3), C3 = C2 / 2,
//   the structure term of SSIM on the same Gaussian window;
//   |g_a - g_b| / (g_a + g_b + c_g), g the central-difference gradient magnitude.
// The six maps are averaged after nearest-neighbour upsampling. Exactly
// symmetric, zero for identical inputs and blind to global intensity shifts.
class StructuralPerceptualSurrogate final : public PerceptualDistance {
 public:
  explicit StructuralPerceptualSurrogate(SsimParams params = {}, double gradient_c = 0.01, int scales = 3);
  Heatmap per_pixel(const Image& a, const Image& b) const override;
  std::string name() const override { return "structural-surrogate"; }

 private:
  SsimParams params_;
  double gradient_c_;
  int scales_;
};

const PerceptualDistance& default_perceptual();

// Step-wise area under the precision-recall curve over every distinct
// score threshold (average precision). Throws if gt has no positives.
double auprc(const Heatmap& scores, const BinaryMask& gt);

// 2|P n G| / (|P| + |G|); 1 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

// Best Dice of (scores >= tau) over every distinct positive score tau.
// Zero-score pixels are never predicted. Throws if gt has no positives.
double max_dice(const Heatmap& scores, const BinaryMask& gt);

// Mean |img(p) - img(q)| over 4-neighbour pairs with p inside and q outside
// the mask; 0 when the mask has no border.
double boundary_discontinuity(const Image& img, const BinaryMask& mask);

enum class Stratum { none, small, medium, large };
std::string_view stratum_name(Stratum s) noexcept;
Stratum stratum_from_name(std::string_view name);

// NaN marks a metric that does not apply (e.g. auprc on a healthy image).
struct EvalRecord {
  int seed = 0;  // evaluation seed index
  std::string image_id;
  std::string method;
  Stratum stratum = Stratum::none;
  int lesion_pixels = 0;
  double mse = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
  double auprc = 0.0;
  double max_dice = 0.0;
  double boundary = 0.0;  // boundary_discontinuity of the reconstruction along the stitching mask
};

struct EvalAggregate {
  std::size_t n = 0;
  double mse = 0.0, ssim = 0.0, perceptual = 0.0, auprc = 0.0, max_dice = 0.0, boundary = 0.0;
};

struct EvalReport {
  std::vector<EvalRecord> records;

  // Means per (method, stratum name), plus stratum "all" per method. NaN
  // entries are skipped per metric; a metric with no finite values is NaN.
  std::map<std::pair<std::string, std::string>, EvalAggregate> aggregates() const;
  std::string to_csv() const;
  std::string summary_json() const;
  static EvalReport from_csv(const std::string& csv);
};

}  // namespace autoddpm
