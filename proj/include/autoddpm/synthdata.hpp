#pragma once
// Brain-like phantoms with injected lesions, standing in for MRI slices.
//
// Dataset directory:
//   manifest.json            format, version, generator settings, sample list
//   images/<id>.adim         one image per sample
//   masks/<id>.admk          ground truth, anomalous samples only

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoddpm/image.hpp"
#include "autoddpm/metrics.hpp"
#include "autoddpm/random.hpp"

namespace autoddpm {

struct Band {
  double lo = 0.0, hi = 0.0;
};

struct PhantomParams {
  int height = 64;
  int width = 64;
  // Head ellipse semi-axes as fractions of the image height / width.
  Band head_rows{0.38, 0.45};
  Band head_cols{0.32, 0.40};
  Band skull_thickness{2.0, 3.0};  // pixels
  Band skull_level{0.80, 0.95};
  Band tissue_level{0.45, 0.55};
  int min_structures = 3;
  int max_structures = 6;
  Band dark_level{0.15, 0.30};
  Band bright_level{0.60, 0.75};
  double deformation = 1.5;  // peak displacement in pixels
  double texture_sigma = 0.015;
  double background = 0.0;
  // Expected foreground fraction of the head ellipse range above.
  Band foreground_fraction{0.35, 0.65};

  // Throws std::invalid_argument. Sizes must be divisible by 4.
  void validate() const;
};

// Pixels brighter than background + 0.05.
BinaryMask foreground_mask(const Image& img, const PhantomParams& params);

// Geometry and texture come from geometry_seed, the smooth warp from
// warp_seed; with deformation == 0 the output does not depend on warp_seed.
Image generate_healthy_staged(const PhantomParams& params, std::uint64_t geometry_seed, std::uint64_t warp_seed);
// Draws both stage seeds from rng.
Image generate_healthy(const PhantomParams& params, RandomSource& rng);

enum class SizeClass { small, medium, large };
enum class IntensityMode { hypo, hyper };
std::string_view size_class_name(SizeClass c) noexcept;
SizeClass size_class_from_name(std::string_view name);

struct AnomalySpec {
  SizeClass size_class = SizeClass::medium;
  // Inclusive pixel-count ranges: the 128x128 cutoffs (<71, >=570) scaled
  // by the area ratio 1/4.
  std::array<int, 2> small{6, 17};
  std::array<int, 2> medium{18, 142};
  std::array<int, 2> large{143, 280};
  IntensityMode mode = IntensityMode::hypo;
  double irregularity = 0.35;  // radial noise amplitude of the blob outline
  Band strength{0.5, 0.7};     // fraction of the way towards 0 (hypo) or 1 (hyper)
  // Lesions keep this many pixels between themselves and the skull.
  int margin = 2;

  void validate() const;
  std::array<int, 2> range(SizeClass c) const;
};

// Pixels whose value moved by at most this much count as unaltered.
inline constexpr float kBlendEpsilon = 1e-3f;

struct LabeledSample {
  Image image;
  BinaryMask gt_mask;
  int lesion_pixels = 0;
  SizeClass size_class = SizeClass::medium;
};

// Throws DataError when the foreground cannot host the requested class.
LabeledSample inject_anomaly(const Image& img, const AnomalySpec& spec, const PhantomParams& params,
                             RandomSource& rng);

// Divide by the 98th percentile intensity and clip to [0, 1].
Image normalize_98(const Image& img);

// Quartile strata over lesion sizes: small below q_low, large above q_high,
// everything else (ties at the cutoffs included) medium.
std::vector<Stratum> stratify(std::span<const int> lesion_pixels, double q_low = 0.25, double q_high = 0.75);

enum class Split { train, test };
std::string_view split_name(Split s) noexcept;

struct DatasetSample {
  std::string id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  Image image;
  std::optional<BinaryMask> mask;
  std::optional<SizeClass> size_class;
  int lesion_pixels = 0;
};

struct DatasetSpec {
  PhantomParams phantom;
  AnomalySpec anomaly;
  int n_train = 512;
  int n_test_healthy = 30;
  int n_test_anomalous = 60;  // spread evenly over the three classes
  double hyper_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<DatasetSample> samples;

  std::vector<Image> images(Split split, bool anomalous) const;
  std::vector<const DatasetSample*> select(Split split, bool anomalous) const;
};

// Deterministic in spec; per-sample seeds make the result independent of
// the worker count.
Dataset generate_dataset(const DatasetSpec& spec, int workers = 1);

void dataset_save(const Dataset& ds, const std::filesystem::path& dir);
// Throws DataError on a missing, corrupt or incompatible dataset.
Dataset dataset_load(const std::filesystem::path& dir);

}  // namespace autoddpm
