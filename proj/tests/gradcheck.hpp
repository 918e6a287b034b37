#pragma once
// Central-difference gradient checks for every layer and for the full
// network, in double. Shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "autoddpm/tensor.hpp"
#include "autoddpm/unet.hpp"
#include "test_util.hpp"

namespace gradcheck {

using namespace autoddpm;
using Vec = std::vector<double>;

constexpr double kTol = 1e-3;
constexpr double kStep = 1e-6;

struct Result {
  std::string what;
  double worst = 0.0;  // largest relative error over the probed entries
  std::size_t probed = 0;
};

inline Vec randv(std::size_t n, RandomSource& rng) {
  Vec v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

inline Tensor<double> randt(int n, int h, int w, int c, RandomSource& rng) {
  Tensor<double> t(n, h, w, c);
  for (auto& x : t.data) x = rng.normal();
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Central differences of f with respect to every entry of v against g.
inline Result probe(std::string what, Vec& v, const Vec& g, const std::function<double()>& f) {
  Result r{std::move(what), 0.0, 0};
  if (v.size() != g.size()) {
    r.worst = INFINITY;
    return r;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + kStep;
    const double fp = f();
    v[i] = orig - kStep;
    const double fm = f();
    v[i] = orig;
    r.worst = std::max(r.worst, testutil::rel_err((fp - fm) / (2 * kStep), g[i], 1e-4));
    ++r.probed;
  }
  return r;
}

// Every layer on 8x8 inputs (batch 2), loss = <layer output, R>.
inline std::vector<Result> layer_checks(std::uint64_t seed) {
  RandomSource rng(seed);
  std::vector<Result> out;

  for (const int k : {1, 3}) {
    const int cin = 2, cout = 3;
    auto x = randt(2, 8, 8, cin, rng);
    Vec w = randv(static_cast<std::size_t>(k * k * cin * cout), rng), b = randv(cout, rng);
    const auto R = randt(2, 8, 8, cout, rng);
    const auto f = [&] {
      Tensor<double> o;
      ops::conv2d_forward<double>(x, w, b, k, cout, o);
      return dot(o.data, R.data);
    };
    Vec dw(w.size()), db(b.size());
    Tensor<double> dx(2, 8, 8, cin);
    ops::conv2d_backward<double>(x, w, k, R, dw, db, &dx);
    const std::string tag = "conv" + std::to_string(k) + "x" + std::to_string(k);
    out.push_back(probe(tag + " weight", w, dw, f));
    out.push_back(probe(tag + " bias", b, db, f));
    out.push_back(probe(tag + " input", x.data, dx.data, f));
  }

  {
    const int c = 4, groups = 2;
    auto x = randt(2, 8, 8, c, rng);
    Vec gamma = randv(c, rng), beta = randv(c, rng);
    const auto R = randt(2, 8, 8, c, rng);
    const auto f = [&] {
      Tensor<double> o;
      ops::GroupNormCache<double> cache;
      ops::group_norm_forward<double>(x, gamma, beta, groups, o, cache);
      return dot(o.data, R.data);
    };
    Tensor<double> o, dx(2, 8, 8, c);
    ops::GroupNormCache<double> cache;
    ops::group_norm_forward<double>(x, gamma, beta, groups, o, cache);
    Vec dg(c), dbt(c);
    ops::group_norm_backward<double>(x, gamma, groups, cache, R, dg, dbt, dx);
    out.push_back(probe("group norm gamma", gamma, dg, f));
    out.push_back(probe("group norm beta", beta, dbt, f));
    out.push_back(probe("group norm input", x.data, dx.data, f));
  }

  {
    Vec x = randv(2 * 8 * 8, rng), R = randv(x.size(), rng), dx(x.size());
    ops::silu_backward<double>(x, R, dx);
    out.push_back(probe("silu", x, dx, [&] {
      Vec o(x.size());
      ops::silu_forward<double>(x, o);
      return dot(o, R);
    }));
  }

  {
    auto x = randt(2, 8, 8, 2, rng);
    const auto Rp = randt(2, 4, 4, 2, rng), Ru = randt(2, 16, 16, 2, rng);
    Tensor<double> dx(2, 8, 8, 2);
    ops::avgpool2_backward<double>(Rp, dx);
    out.push_back(probe("avgpool", x.data, dx.data, [&] {
      Tensor<double> o;
      ops::avgpool2_forward<double>(x, o);
      return dot(o.data, Rp.data);
    }));
    Tensor<double> dx2(2, 8, 8, 2);
    ops::upsample2_backward<double>(Ru, dx2);
    out.push_back(probe("upsample", x.data, dx2.data, [&] {
      Tensor<double> o;
      ops::upsample2_forward<double>(x, o);
      return dot(o.data, Ru.data);
    }));
  }

  {
    auto a = randt(2, 8, 8, 2, rng), b = randt(2, 8, 8, 3, rng);
    const auto R = randt(2, 8, 8, 5, rng);
    Tensor<double> da(2, 8, 8, 2), dbb(2, 8, 8, 3);
    ops::concat_backward<double>(R, da, dbb);
    const auto f = [&] {
      Tensor<double> o;
      ops::concat_forward<double>(a, b, o);
      return dot(o.data, R.data);
    };
    out.push_back(probe("concat a", a.data, da.data, f));
    out.push_back(probe("concat b", b.data, dbb.data, f));
  }

  {
    const int rows = 3, in = 5, n_out = 4;
    Vec x = randv(rows * in, rng), w = randv(in * n_out, rng), b = randv(n_out, rng), R = randv(rows * n_out, rng);
    Vec dx(x.size()), dw(w.size()), db(b.size());
    ops::dense_backward<double>(x, rows, in, w, n_out, R, dw, db, dx);
    const auto f = [&] {
      Vec y(rows * n_out);
      ops::dense_forward<double>(x, rows, in, w, b, n_out, y);
      return dot(y, R);
    };
    out.push_back(probe("dense input", x, dx, f));
    out.push_back(probe("dense weight", w, dw, f));
    out.push_back(probe("dense bias", b, db, f));
  }

  {
    auto x = randt(2, 8, 8, 3, rng);
    Vec v = randv(6, rng), dv(6);
    const auto R = randt(2, 8, 8, 3, rng);
    ops::add_channel_bias_backward<double>(R, dv);
    out.push_back(probe("channel bias", v, dv, [&] {
      Tensor<double> o = x;
      ops::add_channel_bias<double>(o, v);
      return dot(o.data, R.data);
    }));
  }
  return out;
}

// Whole network on a 2x8x8 batch: about six probes per parameter tensor.
// Also returns the loss mismatch against a direct recomputation.
inline std::vector<Result> network_checks(std::uint64_t seed, double* loss_rel_err = nullptr) {
  UNetConfig cfg;
  cfg.base_channels = 8;
  cfg.norm_groups = 4;
  cfg.temb_dim = 8;
  RandomSource rng(seed);
  auto p = convert_params<double>(unet_init(cfg, rng, {false}));
  const UNetModel<double> model(cfg);
  const auto x = randt(2, 8, 8, 1, rng), e = randt(2, 8, 8, 1, rng);
  const int ts[2] = {5, 700};
  auto g = p.zeros_like();
  const double loss = model.loss_and_grad(p, x, ts, e, 0.5, g);
  if (loss_rel_err) {
    Tensor<double> pred;
    model.predict(p, x, ts, pred);
    double ref = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ref += (pred.data[i] - e.data[i]) * (pred.data[i] - e.data[i]);
    *loss_rel_err = testutil::rel_err(loss, ref, 1e-12);
  }

  std::vector<Result> out;
  for (std::size_t k = 0; k < p.tensors.size(); ++k) {
    auto& data = p.tensors[k].data;
    const std::size_t stride = 1 + data.size() / 6;
    Result r{"net " + p.tensors[k].name, 0.0, 0};
    auto scratch = p.zeros_like();
    for (std::size_t i = 0; i < data.size(); i += stride) {
      const double orig = data[i];
      data[i] = orig + kStep;
      const double lp = model.loss_and_grad(p, x, ts, e, 0.5, scratch);
      data[i] = orig - kStep;
      const double lm = model.loss_and_grad(p, x, ts, e, 0.5, scratch);
      data[i] = orig;
      r.worst = std::max(r.worst, testutil::rel_err(0.5 * (lp - lm) / (2 * kStep), g.tensors[k].data[i], 1e-4));
      ++r.probed;
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gradcheck
