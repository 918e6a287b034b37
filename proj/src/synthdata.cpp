#include "autoddpm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "autoddpm/binio.hpp"
#include "autoddpm/image_io.hpp"
#include "autoddpm/parallel.hpp"

namespace autoddpm {
namespace {

using json = nlohmann::ordered_json;

constexpr int kManifestVersion = 1;
constexpr std::string_view kManifestFormat = "autoddpm-dataset";
constexpr double kForegroundThreshold = 0.05;
constexpr int kPlacementAttempts = 400;

double draw(RandomSource& rng, const Band& b) { return b.lo + (b.hi - b.lo) * rng.uniform(); }

void check_band(const Band& b, const char* name, double lo, double hi) {
  if (!(b.lo <= b.hi && b.lo >= lo && b.hi <= hi)) {
    throw std::invalid_argument(std::string("PhantomParams: ") + name + " must satisfy " + std::to_string(lo) +
                                " <= lo <= hi <= " + std::to_string(hi));
  }
}

// Antialiased coverage of a pixel whose centre lies d pixels inside an edge.
double coverage(double d) { return std::clamp(0.5 + d, 0.0, 1.0); }

struct Ellipse {
  double cy = 0, cx = 0, ry = 1, rx = 1, angle = 0;

  // Approximate signed distance in pixels, positive inside.
  double inside_distance(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dy = y - cy, dx = x - cx;
    const double u = c * dy + s * dx, v = -s * dy + c * dx;
    const double r = std::sqrt((u / ry) * (u / ry) + (v / rx) * (v / rx));
    return (1.0 - r) * std::min(ry, rx);
  }
};

struct Structure {
  Ellipse shape;
  double level = 0;
};

struct Geometry {
  Ellipse head;
  double skull_thickness = 0, skull_level = 0, tissue_level = 0;
  // Low-frequency tissue shading.
  double shade_amp = 0, shade_fy = 0, shade_fx = 0, shade_py = 0, shade_px = 0;
  std::vector<Structure> structures;
};

Geometry draw_geometry(const PhantomParams& p, RandomSource& rng) {
  Geometry g;
  const double h = p.height, w = p.width;
  g.head.cy = (h - 1) / 2.0 + (rng.uniform() - 0.5) * 2.0;
  g.head.cx = (w - 1) / 2.0 + (rng.uniform() - 0.5) * 2.0;
  g.head.ry = draw(rng, p.head_rows) * h;
  g.head.rx = draw(rng, p.head_cols) * w;
  g.head.angle = (rng.uniform() - 0.5) * 0.4;
  g.skull_thickness = draw(rng, p.skull_thickness);
  g.skull_level = draw(rng, p.skull_level);
  g.tissue_level = draw(rng, p.tissue_level);
  g.shade_amp = 0.03 * rng.uniform();
  g.shade_fy = 2.0 * std::numbers::pi / h * (0.5 + rng.uniform());
  g.shade_fx = 2.0 * std::numbers::pi / w * (0.5 + rng.uniform());
  g.shade_py = 2.0 * std::numbers::pi * rng.uniform();
  g.shade_px = 2.0 * std::numbers::pi * rng.uniform();
  const int count = rng.uniform_int(p.min_structures, p.max_structures);
  const double bry = g.head.ry - g.skull_thickness, brx = g.head.rx - g.skull_thickness;
  for (int i = 0; i < count; ++i) {
    Structure s;
    const double rho = 0.55 * std::sqrt(rng.uniform()), phi = 2.0 * std::numbers::pi * rng.uniform();
    s.shape.cy = g.head.cy + rho * bry * std::sin(phi);
    s.shape.cx = g.head.cx + rho * brx * std::cos(phi);
    s.shape.ry = (0.08 + 0.14 * rng.uniform()) * bry;
    s.shape.rx = (0.08 + 0.14 * rng.uniform()) * brx;
    s.shape.angle = std::numbers::pi * rng.uniform();
    s.level = rng.uniform() < 0.5 ? draw(rng, p.dark_level) : draw(rng, p.bright_level);
    g.structures.push_back(s);
  }
  return g;
}

// (brain coverage, intensity) at a continuous position.
std::pair<double, double> render(const PhantomParams& p, const Geometry& g, double y, double x) {
  const double d = g.head.inside_distance(y, x);
  const double head = coverage(d), brain = coverage(d - g.skull_thickness);
  double tissue = g.tissue_level + g.shade_amp * std::sin(g.shade_fy * y + g.shade_py) * std::cos(g.shade_fx * x + g.shade_px);
  for (const auto& s : g.structures) {
    const double c = coverage(s.shape.inside_distance(y, x));
    tissue = tissue * (1.0 - c) + s.level * c;
  }
  const double v = p.background * (1.0 - head) + g.skull_level * (head - brain) + tissue * brain;
  return {brain, v};
}

struct Warp {
  double amp = 0;
  double ky[2]{}, kx[2]{}, phase[2]{}, weight_y[2]{}, weight_x[2]{};

  std::pair<double, double> displacement(double y, double x) const {
    double dy = 0, dx = 0;
    for (int k = 0; k < 2; ++k) {
      const double s = std::sin(ky[k] * y + kx[k] * x + phase[k]);
      dy += weight_y[k] * s;
      dx += weight_x[k] * s;
    }
    return {amp * dy, amp * dx};
  }
};

Warp draw_warp(const PhantomParams& p, RandomSource& rng) {
  Warp w;
  w.amp = p.deformation;
  for (int k = 0; k < 2; ++k) {
    const double f = 2.0 * std::numbers::pi * (0.5 + rng.uniform()), dir = 2.0 * std::numbers::pi * rng.uniform();
    w.ky[k] = f * std::sin(dir) / p.height;
    w.kx[k] = f * std::cos(dir) / p.width;
    w.phase[k] = 2.0 * std::numbers::pi * rng.uniform();
    w.weight_y[k] = 0.5 * (2.0 * rng.uniform() - 1.0);
    w.weight_x[k] = 0.5 * (2.0 * rng.uniform() - 1.0);
  }
  return w;
}

BinaryMask erode(const BinaryMask& m, int r) {
  const int h = m.height(), w = m.width();
  BinaryMask out(h, w, std::uint8_t{0});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool keep = true;
      for (int dy = -r; dy <= r && keep; ++dy) {
        for (int dx = -r; dx <= r && keep; ++dx) {
          const int yy = y + dy, xx = x + dx;
          keep = yy >= 0 && yy < h && xx >= 0 && xx < w && m(yy, xx);
        }
      }
      out(y, x) = keep ? 1 : 0;
    }
  }
  return out;
}

struct Blob {
  double cy = 0, cx = 0;
  double a[3]{}, phase[3]{};
  double irregularity = 0;

  double radius_factor(double theta) const {
    double f = 1.0;
    for (int k = 0; k < 3; ++k) f += irregularity * a[k] * std::cos((k + 2) * theta + phase[k]);
    return f;
  }

  BinaryMask raster(int h, int w, double r0) const {
    BinaryMask m(h, w, std::uint8_t{0});
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double r = std::sqrt(dy * dy + dx * dx);
        m(y, x) = r <= r0 * radius_factor(std::atan2(dy, dx)) ? 1 : 0;
      }
    }
    return m;
  }
};

SizeClass parse_size_class(const std::string& s) { return size_class_from_name(s); }

json band_json(const Band& b) { return json::array({b.lo, b.hi}); }
Band band_from(const json& j) { return Band{j.at(0).get<double>(), j.at(1).get<double>()}; }

json phantom_json(const PhantomParams& p) {
  return json{{"height", p.height},
              {"width", p.width},
              {"head_rows", band_json(p.head_rows)},
              {"head_cols", band_json(p.head_cols)},
              {"skull_thickness", band_json(p.skull_thickness)},
              {"skull_level", band_json(p.skull_level)},
              {"tissue_level", band_json(p.tissue_level)},
              {"min_structures", p.min_structures},
              {"max_structures", p.max_structures},
              {"dark_level", band_json(p.dark_level)},
              {"bright_level", band_json(p.bright_level)},
              {"deformation", p.deformation},
              {"texture_sigma", p.texture_sigma},
              {"background", p.background},
              {"foreground_fraction", band_json(p.foreground_fraction)}};
}

PhantomParams phantom_from(const json& j) {
  PhantomParams p;
  p.height = j.at("height").get<int>();
  p.width = j.at("width").get<int>();
  p.head_rows = band_from(j.at("head_rows"));
  p.head_cols = band_from(j.at("head_cols"));
  p.skull_thickness = band_from(j.at("skull_thickness"));
  p.skull_level = band_from(j.at("skull_level"));
  p.tissue_level = band_from(j.at("tissue_level"));
  p.min_structures = j.at("min_structures").get<int>();
  p.max_structures = j.at("max_structures").get<int>();
  p.dark_level = band_from(j.at("dark_level"));
  p.bright_level = band_from(j.at("bright_level"));
  p.deformation = j.at("deformation").get<double>();
  p.texture_sigma = j.at("texture_sigma").get<double>();
  p.background = j.at("background").get<double>();
  p.foreground_fraction = band_from(j.at("foreground_fraction"));
  return p;
}

json anomaly_json(const AnomalySpec& a) {
  return json{{"small", a.small},
              {"medium", a.medium},
              {"large", a.large},
              {"irregularity", a.irregularity},
              {"strength", band_json(a.strength)},
              {"margin", a.margin}};
}

AnomalySpec anomaly_from(const json& j) {
  AnomalySpec a;
  a.small = j.at("small").get<std::array<int, 2>>();
  a.medium = j.at("medium").get<std::array<int, 2>>();
  a.large = j.at("large").get<std::array<int, 2>>();
  a.irregularity = j.at("irregularity").get<double>();
  a.strength = band_from(j.at("strength"));
  a.margin = j.at("margin").get<int>();
  return a;
}

}  // namespace

void PhantomParams::validate() const {
  if (height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0) {
    throw std::invalid_argument("PhantomParams: height and width must be >= 8 and divisible by 4");
  }
  check_band(head_rows, "head_rows", 0.05, 0.5);
  check_band(head_cols, "head_cols", 0.05, 0.5);
  check_band(skull_thickness, "skull_thickness", 0.0, 0.25 * std::min(height, width));
  check_band(skull_level, "skull_level", 0.0, 1.0);
  check_band(tissue_level, "tissue_level", 0.0, 1.0);
  check_band(dark_level, "dark_level", 0.0, 1.0);
  check_band(bright_level, "bright_level", 0.0, 1.0);
  check_band(foreground_fraction, "foreground_fraction", 0.0, 1.0);
  if (min_structures < 0 || max_structures < min_structures) {
    throw std::invalid_argument("PhantomParams: need 0 <= min_structures <= max_structures");
  }
  if (!(deformation >= 0.0) || !(texture_sigma >= 0.0)) {
    throw std::invalid_argument("PhantomParams: deformation and texture_sigma must be >= 0");
  }
  if (!(background >= 0.0 && background <= 1.0)) throw std::invalid_argument("PhantomParams: background outside [0, 1]");
}

BinaryMask foreground_mask(const Image& img, const PhantomParams& params) {
  BinaryMask m(img.height(), img.width(), std::uint8_t{0});
  const double thr = params.background + kForegroundThreshold;
  for (std::size_t i = 0; i < img.size(); ++i) m[i] = img[i] > thr ? 1 : 0;
  return m;
}

Image generate_healthy_staged(const PhantomParams& params, std::uint64_t geometry_seed, std::uint64_t warp_seed) {
  params.validate();
  RandomSource geo_rng(geometry_seed), warp_rng(warp_seed);
  const Geometry g = draw_geometry(params, geo_rng);
  const Warp warp = draw_warp(params, warp_rng);
  Image img(params.height, params.width);
  for (int y = 0; y < params.height; ++y) {
    for (int x = 0; x < params.width; ++x) {
      const auto [dy, dx] = warp.displacement(y, x);
      const auto [brain, v] = render(params, g, y + dy, x + dx);
      const double noise = params.texture_sigma * geo_rng.normal();
      img(y, x) = static_cast<float>(std::clamp(v + brain * noise, 0.0, 1.0));
    }
  }
  return img;
}

Image generate_healthy(const PhantomParams& params, RandomSource& rng) {
  const std::uint64_t geometry_seed = rng.next_u64();
  const std::uint64_t warp_seed = rng.next_u64();
  return generate_healthy_staged(params, geometry_seed, warp_seed);
}

std::string_view size_class_name(SizeClass c) noexcept {
  switch (c) {
    case SizeClass::small: return "small";
    case SizeClass::medium: return "medium";
    case SizeClass::large: return "large";
  }
  return "?";
}

SizeClass size_class_from_name(std::string_view name) {
  if (name == "small") return SizeClass::small;
  if (name == "medium") return SizeClass::medium;
  if (name == "large") return SizeClass::large;
  throw std::invalid_argument("unknown size class '" + std::string(name) + "'");
}

void AnomalySpec::validate() const {
  if (!(1 <= small[0] && small[0] <= small[1] && small[1] < medium[0] && medium[0] <= medium[1] &&
        medium[1] < large[0] && large[0] <= large[1])) {
    throw std::invalid_argument("AnomalySpec: size ranges must be positive, disjoint and ordered small < medium < large");
  }
  if (!(irregularity >= 0.0 && irregularity < 0.9)) throw std::invalid_argument("AnomalySpec: irregularity in [0, 0.9)");
  if (!(strength.lo > 0.0 && strength.lo <= strength.hi && strength.hi <= 1.0)) {
    throw std::invalid_argument("AnomalySpec: strength must satisfy 0 < lo <= hi <= 1");
  }
  if (margin < 0) throw std::invalid_argument("AnomalySpec: margin must be >= 0");
}

std::array<int, 2> AnomalySpec::range(SizeClass c) const {
  switch (c) {
    case SizeClass::small: return small;
    case SizeClass::medium: return medium;
    case SizeClass::large: return large;
  }
  return medium;
}

LabeledSample inject_anomaly(const Image& img, const AnomalySpec& spec, const PhantomParams& params,
                             RandomSource& rng) {
  spec.validate();
  const int h = img.height(), w = img.width();
  const BinaryMask host =
      erode(foreground_mask(img, params), static_cast<int>(std::ceil(params.skull_thickness.hi)) + spec.margin);
  std::vector<std::size_t> host_pixels;
  for (std::size_t i = 0; i < host.size(); ++i) {
    if (host[i]) host_pixels.push_back(i);
  }
  const auto [lo, hi] = spec.range(spec.size_class);
  if (host_pixels.size() < static_cast<std::size_t>(lo)) {
    throw DataError("inject_anomaly: foreground too small for a " + std::string(size_class_name(spec.size_class)) +
                    " lesion");
  }
  const double r_max = 2.0 * std::sqrt(hi / std::numbers::pi) + 2.0;
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    const int target = rng.uniform_int(lo, hi);
    const std::size_t centre = host_pixels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(host_pixels.size()) - 1))];
    Blob blob;
    blob.cy = static_cast<double>(centre / w) + rng.uniform() - 0.5;
    blob.cx = static_cast<double>(centre % w) + rng.uniform() - 0.5;
    blob.irregularity = spec.irregularity;
    for (int k = 0; k < 3; ++k) {
      blob.a[k] = (2.0 * rng.uniform() - 1.0) / (k + 2);
      blob.phase[k] = 2.0 * std::numbers::pi * rng.uniform();
    }
    const double alpha = draw(rng, spec.strength);
    // Smallest radius whose raster reaches the target count.
    double r_lo = 0.0, r_hi = r_max;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (r_lo + r_hi);
      (static_cast<int>(popcount(blob.raster(h, w, mid))) >= target ? r_hi : r_lo) = mid;
    }
    BinaryMask mask = blob.raster(h, w, r_hi);
    const int n = static_cast<int>(popcount(mask));
    if (n < lo || n > hi) continue;
    bool ok = true;
    Image out = img;
    for (std::size_t i = 0; i < mask.size() && ok; ++i) {
      if (!mask[i]) continue;
      const float v = img[i];
      const float nv = spec.mode == IntensityMode::hypo ? static_cast<float>(v * (1.0 - alpha))
                                                        : static_cast<float>(v + alpha * (1.0 - v));
      ok = host[i] && std::abs(nv - v) > kBlendEpsilon;
      out[i] = nv;
    }
    if (!ok) continue;
    LabeledSample s{std::move(out), std::move(mask), n, spec.size_class};
    return s;
  }
  throw DataError("inject_anomaly: could not place a " + std::string(size_class_name(spec.size_class)) +
                  " lesion inside the foreground");
}

Image normalize_98(const Image& img) {
  if (img.empty()) throw std::invalid_argument("normalize_98: empty image");
  const double p98 = percentile(img.values(), 98.0);
  if (!(p98 > 0.0)) throw std::invalid_argument("normalize_98: 98th percentile is not positive (all-zero image?)");
  Image out(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<float>(std::clamp(static_cast<double>(img[i]) / p98, 0.0, 1.0));
  }
  return out;
}

std::vector<Stratum> stratify(std::span<const int> lesion_pixels, double q_low, double q_high) {
  if (lesion_pixels.empty()) throw std::invalid_argument("stratify: empty sample list");
  if (!(0.0 <= q_low && q_low <= q_high && q_high <= 1.0)) {
    throw std::invalid_argument("stratify: need 0 <= q_low <= q_high <= 1");
  }
  std::vector<float> sizes;
  for (const int s : lesion_pixels) {
    if (s <= 0) throw std::invalid_argument("stratify: lesion sizes must be positive");
    sizes.push_back(static_cast<float>(s));
  }
  const double lo = percentile(sizes, 100.0 * q_low), hi = percentile(sizes, 100.0 * q_high);
  std::vector<Stratum> out;
  out.reserve(sizes.size());
  for (const int s : lesion_pixels) {
    out.push_back(s < lo ? Stratum::small : (s > hi ? Stratum::large : Stratum::medium));
  }
  return out;
}

std::string_view split_name(Split s) noexcept { return s == Split::train ? "train" : "test"; }

void DatasetSpec::validate() const {
  phantom.validate();
  anomaly.validate();
  if (n_train < 0 || n_test_healthy < 0 || n_test_anomalous < 0) {
    throw std::invalid_argument("DatasetSpec: sample counts must be >= 0");
  }
  if (!(hyper_fraction >= 0.0 && hyper_fraction <= 1.0)) {
    throw std::invalid_argument("DatasetSpec: hyper_fraction must lie in [0, 1]");
  }
}

std::vector<const DatasetSample*> Dataset::select(Split split, bool anomalous) const {
  std::vector<const DatasetSample*> out;
  for (const auto& s : samples) {
    if (s.split == split && s.mask.has_value() == anomalous) out.push_back(&s);
  }
  return out;
}

std::vector<Image> Dataset::images(Split split, bool anomalous) const {
  std::vector<Image> out;
  for (const auto* s : select(split, anomalous)) out.push_back(s->image);
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec, int workers) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  const auto n_train = static_cast<std::size_t>(spec.n_train);
  const auto n_healthy = static_cast<std::size_t>(spec.n_test_healthy);
  const auto n_anom = static_cast<std::size_t>(spec.n_test_anomalous);
  ds.samples.resize(n_train + n_healthy + n_anom);
  parallel_for(ds.samples.size(), workers, [&](std::size_t k) {
    DatasetSample& s = ds.samples[k];
    char id[32];
    if (k < n_train) {
      std::snprintf(id, sizeof id, "train-%04zu", k);
      s.split = Split::train;
      s.seed = mix_seed(spec.seed, {1, k});
    } else if (k < n_train + n_healthy) {
      std::snprintf(id, sizeof id, "healthy-%04zu", k - n_train);
      s.split = Split::test;
      s.seed = mix_seed(spec.seed, {2, k - n_train});
    } else {
      std::snprintf(id, sizeof id, "lesion-%04zu", k - n_train - n_healthy);
      s.split = Split::test;
      s.seed = mix_seed(spec.seed, {3, k - n_train - n_healthy});
    }
    s.id = id;
    RandomSource rng(s.seed);
    s.image = normalize_98(generate_healthy(spec.phantom, rng));
    if (k >= n_train + n_healthy) {
      AnomalySpec a = spec.anomaly;
      a.size_class = static_cast<SizeClass>((k - n_train - n_healthy) % 3);
      a.mode = rng.uniform() < spec.hyper_fraction ? IntensityMode::hyper : IntensityMode::hypo;
      LabeledSample ls = inject_anomaly(s.image, a, spec.phantom, rng);
      s.image = std::move(ls.image);
      s.mask = std::move(ls.gt_mask);
      s.size_class = ls.size_class;
      s.lesion_pixels = ls.lesion_pixels;
    }
  });
  return ds;
}

void dataset_save(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  json samples = json::array();
  for (const auto& s : ds.samples) {
    const std::string image_rel = "images/" + s.id + ".adim";
    save_image(dir / image_rel, s.image);
    json e{{"id", s.id}, {"split", split_name(s.split)}, {"seed", s.seed}, {"image", image_rel}};
    if (s.mask) {
      const std::string mask_rel = "masks/" + s.id + ".admk";
      save_mask(dir / mask_rel, *s.mask);
      e["mask"] = mask_rel;
      e["size_class"] = size_class_name(s.size_class.value_or(SizeClass::medium));
      e["lesion_pixels"] = s.lesion_pixels;
    }
    samples.push_back(std::move(e));
  }
  const json manifest{{"format", kManifestFormat},
                      {"version", kManifestVersion},
                      {"seed", ds.spec.seed},
                      {"n_train", ds.spec.n_train},
                      {"n_test_healthy", ds.spec.n_test_healthy},
                      {"n_test_anomalous", ds.spec.n_test_anomalous},
                      {"hyper_fraction", ds.spec.hyper_fraction},
                      {"phantom", phantom_json(ds.spec.phantom)},
                      {"anomaly", anomaly_json(ds.spec.anomaly)},
                      {"samples", std::move(samples)}};
  // The manifest goes last so a dataset with a manifest is complete.
  write_text_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset dataset_load(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw DataError(manifest_path.string() + ": no dataset manifest");
  Dataset ds;
  try {
    const json m = json::parse(read_text_file(manifest_path));
    if (m.at("format").get<std::string>() != kManifestFormat) throw DataError(manifest_path.string() + ": not a dataset manifest");
    if (m.at("version").get<int>() != kManifestVersion) {
      throw DataError(manifest_path.string() + ": unsupported manifest version " + std::to_string(m.at("version").get<int>()));
    }
    ds.spec.seed = m.at("seed").get<std::uint64_t>();
    ds.spec.n_train = m.at("n_train").get<int>();
    ds.spec.n_test_healthy = m.at("n_test_healthy").get<int>();
    ds.spec.n_test_anomalous = m.at("n_test_anomalous").get<int>();
    ds.spec.hyper_fraction = m.at("hyper_fraction").get<double>();
    ds.spec.phantom = phantom_from(m.at("phantom"));
    ds.spec.anomaly = anomaly_from(m.at("anomaly"));
    for (const auto& e : m.at("samples")) {
      DatasetSample s;
      s.id = e.at("id").get<std::string>();
      const std::string split = e.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DataError(manifest_path.string() + ": bad split '" + split + "'");
      s.split = split == "train" ? Split::train : Split::test;
      s.seed = e.at("seed").get<std::uint64_t>();
      s.image = load_image(dir / e.at("image").get<std::string>());
      if (e.contains("mask")) {
        s.mask = load_mask(dir / e.at("mask").get<std::string>());
        s.size_class = parse_size_class(e.at("size_class").get<std::string>());
        s.lesion_pixels = e.at("lesion_pixels").get<int>();
        require_same_shape(*s.mask, s.image, "dataset_load");
        if (static_cast<std::size_t>(s.lesion_pixels) != popcount(*s.mask)) {
          throw DataError(manifest_path.string() + ": lesion_pixels of '" + s.id + "' disagrees with its mask");
        }
      }
      ds.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": malformed manifest (" + e.what() + ")");
  } catch (const std::invalid_argument& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace autoddpm
