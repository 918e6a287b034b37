#pragma once
// Brute-force reference implementations shared by the metric unit tests and
// the acceptance run.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "autoddpm/metrics.hpp"
#include "test_util.hpp"

namespace oracle {

using namespace autoddpm;

// Scores on a coarse grid so ties are common; some zeros.
inline Heatmap grid_scores(int h, int w, RandomSource& rng) {
  Heatmap s(h, w);
  for (auto& v : s.values()) v = static_cast<float>(rng.uniform_int(0, 6)) / 6.0f;
  return s;
}

inline BinaryMask nonempty_mask(int h, int w, RandomSource& rng) {
  BinaryMask m = testutil::random_mask(h, w, rng, rng.uniform());
  if (popcount(m) == 0) m[rng.uniform_int(0, static_cast<int>(m.size()) - 1)] = 1;
  return m;
}

inline std::set<float> distinct(const Heatmap& s) { return {s.values().begin(), s.values().end()}; }

// Counts over a full scan for one threshold.
inline void counts_at(const Heatmap& s, const BinaryMask& gt, float tau, double& tp, double& pred) {
  tp = pred = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] >= tau) {
      pred += 1;
      tp += gt[i] ? 1 : 0;
    }
  }
}

inline double auprc_oracle(const Heatmap& s, const BinaryMask& gt) {
  const double pos = static_cast<double>(popcount(gt));
  const auto taus = distinct(s);
  double area = 0, prev = 0;
  for (auto it = taus.rbegin(); it != taus.rend(); ++it) {
    double tp, pred;
    counts_at(s, gt, *it, tp, pred);
    area += (tp / pos - prev) * (tp / pred);
    prev = tp / pos;
  }
  return area;
}

inline double dice_oracle(const BinaryMask& p, const BinaryMask& g) {
  std::set<std::size_t> a, b, both;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]) a.insert(i);
    if (g[i]) b.insert(i);
    if (p[i] && g[i]) both.insert(i);
  }
  if (a.empty() && b.empty()) return 1.0;
  return 2.0 * both.size() / static_cast<double>(a.size() + b.size());
}

inline double max_dice_oracle(const Heatmap& s, const BinaryMask& gt) {
  double best = 0;
  for (const float tau : distinct(s)) {
    if (tau <= 0) continue;
    BinaryMask p(s.height(), s.width());
    for (std::size_t i = 0; i < s.size(); ++i) p[i] = s[i] >= tau;
    best = std::max(best, dice_oracle(p, gt));
  }
  return best;
}

// k-th smallest by counting (no sorting).
inline double kth(const std::vector<float>& v, std::size_t k) {
  for (const float x : v) {
    std::size_t less = 0, equal = 0;
    for (const float y : v) less += y < x, equal += y == x;
    if (less <= k && k < less + equal) return x;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline double percentile_oracle(const std::vector<float>& v, double p) {
  const double pos = p / 100.0 * (v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - lo;
  const double a = kth(v, lo);
  return frac == 0 ? a : a + frac * (kth(v, lo + 1) - a);
}

inline BinaryMask dilate_oracle(const BinaryMask& m, int k) {
  const int r = k / 2;
  BinaryMask out(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      for (int qy = 0; qy < m.height(); ++qy) {
        for (int qx = 0; qx < m.width(); ++qx) {
          if (m(qy, qx) && std::abs(qy - y) <= r && std::abs(qx - x) <= r) out(y, x) = 1;
        }
      }
    }
  }
  return out;
}


}  // namespace oracle
