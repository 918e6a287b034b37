#include "autoddpm/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "autoddpm/simd.hpp"

namespace autoddpm {
namespace {

std::vector<float> gaussian_taps(const SsimParams& p) {
  const int r = p.window / 2;
  std::vector<double> w(p.window);
  double total = 0.0;
  for (int i = 0; i < p.window; ++i) {
    const double d = i - r;
    w[i] = std::exp(-d * d / (2.0 * p.sigma * p.sigma));
    total += w[i];
  }
  std::vector<float> out(p.window);
  for (int i = 0; i < p.window; ++i) out[i] = static_cast<float>(w[i] / total);
  return out;
}

// In-bounds weight mass of a window centred at each index along one axis.
std::vector<double> window_mass(const std::vector<float>& taps, int len) {
  const int r = static_cast<int>(taps.size()) / 2;
  std::vector<double> m(len, 0.0);
  for (int i = 0; i < len; ++i) {
    for (int j = 0; j < static_cast<int>(taps.size()); ++j) {
      const int s = i + j - r;
      if (s >= 0 && s < len) m[i] += taps[j];
    }
  }
  return m;
}

// Gaussian-weighted local mean of x with the window cut at the border and
// renormalized.
class LocalFilter {
 public:
  LocalFilter(const std::vector<float>& taps, int h, int w)
      : taps_(taps), h_(h), w_(w), r_(static_cast<int>(taps.size()) / 2),
        mass_y_(window_mass(taps, h)), mass_x_(window_mass(taps, w)) {}

  std::vector<double> apply(const std::vector<float>& x) const {
    const auto& k = simd::active();
    const int wp = w_ + 2 * r_;
    std::vector<float> row(wp, 0.0f);
    std::vector<float> tmp(static_cast<std::size_t>(h_ + 2 * r_) * w_, 0.0f);
    for (int y = 0; y < h_; ++y) {
      std::copy_n(x.data() + static_cast<std::size_t>(y) * w_, w_, row.data() + r_);
      k.fir(w_, row.data(), 1, 1, taps_.data(), taps_.size(), tmp.data() + static_cast<std::size_t>(y + r_) * w_);
    }
    std::vector<float> col(w_);
    std::vector<double> out(static_cast<std::size_t>(h_) * w_);
    for (int y = 0; y < h_; ++y) {
      k.fir(w_, tmp.data() + static_cast<std::size_t>(y) * w_, 1, w_, taps_.data(), taps_.size(), col.data());
      for (int xx = 0; xx < w_; ++xx) out[static_cast<std::size_t>(y) * w_ + xx] = col[xx] / (mass_y_[y] * mass_x_[xx]);
    }
    return out;
  }

 private:
  const std::vector<float>& taps_;
  int h_, w_, r_;
  std::vector<double> mass_y_, mass_x_;
};

struct LocalMoments {
  std::vector<double> mu_a, mu_b, var_a, var_b, cov;
};

// Inputs are centred on their global means before filtering so flat regions
// give exactly zero variance.
LocalMoments local_moments(const Image& a, const Image& b, const std::vector<float>& taps) {
  const int h = a.height(), w = a.width();
  const std::size_t n = a.size();
  const auto& k = simd::active();
  const float ma = static_cast<float>(k.sum(n, a.data()) / static_cast<double>(n));
  const float mb = static_cast<float>(k.sum(n, b.data()) / static_cast<double>(n));
  std::vector<float> ca(n), cb(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    ca[i] = a[i] - ma;
    cb[i] = b[i] - mb;
  }
  k.mul(n, ca.data(), ca.data(), aa.data());
  k.mul(n, cb.data(), cb.data(), bb.data());
  k.mul(n, ca.data(), cb.data(), ab.data());
  const LocalFilter f(taps, h, w);
  LocalMoments m;
  m.mu_a = f.apply(ca);
  m.mu_b = f.apply(cb);
  const auto eaa = f.apply(aa), ebb = f.apply(bb), eab = f.apply(ab);
  m.var_a.resize(n);
  m.var_b.resize(n);
  m.cov.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.var_a[i] = eaa[i] - m.mu_a[i] * m.mu_a[i];
    m.var_b[i] = ebb[i] - m.mu_b[i] * m.mu_b[i];
    m.cov[i] = eab[i] - m.mu_a[i] * m.mu_b[i];
    m.mu_a[i] += ma;
    m.mu_b[i] += mb;
  }
  return m;
}

Image avgpool(const Image& x) {
  const int h = (x.height() + 1) / 2, w = (x.width() + 1) / 2;
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      double s = 0.0;
      int cnt = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sy = 2 * y + dy, sx = 2 * xx + dx;
          if (sy < x.height() && sx < x.width()) {
            s += x(sy, sx);
            ++cnt;
          }
        }
      }
      out(y, xx) = static_cast<float>(s / cnt);
    }
  }
  return out;
}

std::vector<double> gradient_magnitude(const Image& x) {
  const int h = x.height(), w = x.width();
  std::vector<double> g(x.size());
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const double gx = 0.5 * (static_cast<double>(x(y, std::min(xx + 1, w - 1))) - x(y, std::max(xx - 1, 0)));
      const double gy = 0.5 * (static_cast<double>(x(std::min(y + 1, h - 1), xx)) - x(std::max(y - 1, 0), xx));
      g[static_cast<std::size_t>(y) * w + xx] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return g;
}

void require_positive(const BinaryMask& gt, const char* what) {
  if (popcount(gt) == 0) throw std::invalid_argument(std::string(what) + ": ground truth has no positives");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

double percentile(std::span<const float> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p must lie in [0, 100]");
  std::vector<float> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return static_cast<double>(v[lo]) + frac * (static_cast<double>(v[hi]) - v[lo]);
}

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) return 0.0;
  return simd::active().sum_sq_diff(a.size(), a.data(), b.data()) / static_cast<double>(a.size());
}

Heatmap ssim_map(const Image& a, const Image& b, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  if (params.window < 1 || params.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd");
  if (a.height() < params.window || a.width() < params.window) {
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(params.window) + "px window");
  }
  const double c1 = std::pow(params.k1 * params.dynamic_range, 2);
  const double c2 = std::pow(params.k2 * params.dynamic_range, 2);
  const auto taps = gaussian_taps(params);
  const LocalMoments m = local_moments(a, b, taps);
  Heatmap out(a.height(), a.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double num = (2.0 * m.mu_a[i] * m.mu_b[i] + c1) * (2.0 * m.cov[i] + c2);
    const double den = (m.mu_a[i] * m.mu_a[i] + m.mu_b[i] * m.mu_b[i] + c1) * (m.var_a[i] + m.var_b[i] + c2);
    out[i] = static_cast<float>(num / den);
  }
  return out;
}

double ssim(const Image& a, const Image& b, const SsimParams& params) {
  const Heatmap m = ssim_map(a, b, params);
  return simd::active().sum(m.size(), m.data()) / static_cast<double>(m.size());
}

double PerceptualDistance::scalar(const Image& a, const Image& b) const {
  const Heatmap m = per_pixel(a, b);
  if (m.empty()) return 0.0;
  return simd::active().sum(m.size(), m.data()) / static_cast<double>(m.size());
}

StructuralPerceptualSurrogate::StructuralPerceptualSurrogate(SsimParams params, double gradient_c, int scales)
    : params_(params), gradient_c_(gradient_c), scales_(scales) {
  if (scales < 1) throw std::invalid_argument("perceptual surrogate: scales must be >= 1");
  if (!(gradient_c > 0.0)) throw std::invalid_argument("perceptual surrogate: gradient constant must be > 0");
}

Heatmap StructuralPerceptualSurrogate::per_pixel(const Image& a, const Image& b) const {
  require_same_shape(a, b, "perceptual");
  const int h = a.height(), w = a.width();
  const double c3 = std::pow(params_.k2 * params_.dynamic_range, 2) / 2.0;
  const auto taps = gaussian_taps(params_);
  std::vector<double> acc(a.size(), 0.0);
  Image sa = a, sb = b;
  for (int s = 0; s < scales_; ++s) {
    const int sw = sa.width();
    const LocalMoments m = local_moments(sa, sb, taps);
    const auto ga = gradient_magnitude(sa), gb = gradient_magnitude(sb);
    std::vector<double> coarse(sa.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) {
      const double va = std::max(m.var_a[i], 0.0), vb = std::max(m.var_b[i], 0.0);
      const double sd = std::sqrt(va * vb);
      const double cov = std::clamp(m.cov[i], -sd, sd);
      const double st = std::clamp((cov + c3) / (sd + c3), -1.0, 1.0);
      coarse[i] = 0.5 * (1.0 - st) + std::abs(ga[i] - gb[i]) / (ga[i] + gb[i] + gradient_c_);
    }
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        acc[static_cast<std::size_t>(y) * w + xx] += coarse[static_cast<std::size_t>(y >> s) * sw + (xx >> s)];
      }
    }
    if (s + 1 < scales_) {
      sa = avgpool(sa);
      sb = avgpool(sb);
    }
  }
  Heatmap out(h, w);
  const double norm = 1.0 / (2.0 * scales_);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(acc[i] * norm);
  return out;
}

const PerceptualDistance& default_perceptual() {
  static const StructuralPerceptualSurrogate d;
  return d;
}

double auprc(const Heatmap& scores, const BinaryMask& gt) {
  require_same_shape(scores, gt, "auprc");
  require_positive(gt, "auprc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  const double positives = static_cast<double>(popcount(gt));
  double tp = 0.0, fp = 0.0, prev_recall = 0.0, area = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const float s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      if (gt[order[k]]) {
        tp += 1.0;
      } else {
        fp += 1.0;
      }
      ++k;
    }
    const double recall = tp / positives;
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "dice");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double max_dice(const Heatmap& scores, const BinaryMask& gt) {
  require_same_shape(scores, gt, "max_dice");
  require_positive(gt, "max_dice");
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > 0.0f) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  const double positives = static_cast<double>(popcount(gt));
  double tp = 0.0, predicted = 0.0, best = 0.0;
  for (std::size_t k = 0; k < order.size();) {
    const float s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      tp += gt[order[k]] ? 1.0 : 0.0;
      predicted += 1.0;
      ++k;
    }
    best = std::max(best, 2.0 * tp / (predicted + positives));
  }
  return best;
}

double boundary_discontinuity(const Image& img, const BinaryMask& mask) {
  require_same_shape(img, mask, "boundary_discontinuity");
  double total = 0.0;
  std::size_t pairs = 0;
  const int h = img.height(), w = img.width();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w && (mask(y, x) != 0) != (mask(y, x + 1) != 0)) {
        total += std::abs(static_cast<double>(img(y, x)) - img(y, x + 1));
        ++pairs;
      }
      if (y + 1 < h && (mask(y, x) != 0) != (mask(y + 1, x) != 0)) {
        total += std::abs(static_cast<double>(img(y, x)) - img(y + 1, x));
        ++pairs;
      }
    }
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

std::string_view stratum_name(Stratum s) noexcept {
  switch (s) {
    case Stratum::small: return "small";
    case Stratum::medium: return "medium";
    case Stratum::large: return "large";
    case Stratum::none: break;
  }
  return "none";
}

Stratum stratum_from_name(std::string_view name) {
  if (name == "none") return Stratum::none;
  if (name == "small") return Stratum::small;
  if (name == "medium") return Stratum::medium;
  if (name == "large") return Stratum::large;
  throw std::invalid_argument("unknown stratum '" + std::string(name) + "'");
}

namespace {

constexpr int kMetricCount = 6;

std::array<double, kMetricCount> metric_values(const EvalRecord& r) {
  return {r.mse, r.ssim, r.perceptual, r.auprc, r.max_dice, r.boundary};
}

}  // namespace

std::map<std::pair<std::string, std::string>, EvalAggregate> EvalReport::aggregates() const {
  struct Acc {
    std::size_t n = 0;
    std::array<double, kMetricCount> sum{};
    std::array<std::size_t, kMetricCount> cnt{};
  };
  // Reduce in (method, seed, image id) order so the result does not depend
  // on record order.
  std::vector<const EvalRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const EvalRecord* a, const EvalRecord* b) {
    return std::tie(a->method, a->seed, a->image_id) < std::tie(b->method, b->seed, b->image_id);
  });
  std::map<std::pair<std::string, std::string>, Acc> acc;
  for (const EvalRecord* r : sorted) {
    const auto v = metric_values(*r);
    for (const std::string& stratum : {std::string(stratum_name(r->stratum)), std::string("all")}) {
      Acc& a = acc[{r->method, stratum}];
      ++a.n;
      for (int k = 0; k < kMetricCount; ++k) {
        if (std::isfinite(v[k])) {
          a.sum[k] += v[k];
          ++a.cnt[k];
        }
      }
    }
  }
  std::map<std::pair<std::string, std::string>, EvalAggregate> out;
  for (const auto& [key, a] : acc) {
    double m[kMetricCount];
    for (int k = 0; k < kMetricCount; ++k) {
      m[k] = a.cnt[k] ? a.sum[k] / static_cast<double>(a.cnt[k]) : std::numeric_limits<double>::quiet_NaN();
    }
    out[key] = EvalAggregate{a.n, m[0], m[1], m[2], m[3], m[4], m[5]};
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::string s = "seed,image_id,method,stratum,lesion_pixels,mse,ssim,perceptual,auprc,max_dice,boundary\n";
  for (const auto& r : records) {
    s += std::to_string(r.seed) + "," + r.image_id + "," + r.method + "," + std::string(stratum_name(r.stratum)) +
         "," + std::to_string(r.lesion_pixels) + "," + fmt(r.mse) + "," + fmt(r.ssim) + "," + fmt(r.perceptual) +
         "," + fmt(r.auprc) + "," + fmt(r.max_dice) + "," + fmt(r.boundary) + "\n";
  }
  return s;
}

std::string EvalReport::summary_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  const auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  for (const auto& [key, a] : aggregates()) {
    j.push_back({{"method", key.first},
                 {"stratum", key.second},
                 {"n", a.n},
                 {"mse", num(a.mse)},
                 {"ssim", num(a.ssim)},
                 {"perceptual", num(a.perceptual)},
                 {"auprc", num(a.auprc)},
                 {"max_dice", num(a.max_dice)},
                 {"boundary", num(a.boundary)}});
  }
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_csv(const std::string& csv) {
  EvalReport rep;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) return rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 11) throw std::invalid_argument("EvalReport::from_csv: expected 11 fields");
    EvalRecord r;
    r.seed = std::stoi(f[0]);
    r.image_id = f[1];
    r.method = f[2];
    r.stratum = stratum_from_name(f[3]);
    r.lesion_pixels = std::stoi(f[4]);
    r.mse = std::strtod(f[5].c_str(), nullptr);
    r.ssim = std::strtod(f[6].c_str(), nullptr);
    r.perceptual = std::strtod(f[7].c_str(), nullptr);
    r.auprc = std::strtod(f[8].c_str(), nullptr);
    r.max_dice = std::strtod(f[9].c_str(), nullptr);
    r.boundary = std::strtod(f[10].c_str(), nullptr);
    rep.records.push_back(std::move(r));
  }
  return rep;
}

}  // namespace autoddpm
