#include <doctest.h>

#include <cmath>
#include <vector>

#include "autoddpm/denoiser.hpp"
#include "autoddpm/unet.hpp"

using namespace autoddpm;

namespace {

// Draws x0 ~ N(mu, s2), eps ~ N(0,1) and bins x_t; within each bin the sample
// mean of eps must match the closed form at the bin's mean x_t (the closed
// form is affine in x_t, so this is exact for the bin average).
void check_binned_posterior(int t, std::uint64_t seed) {
  const auto s = make_schedule();
  const int n = 200000;
  const double mu = 0.4, s2 = 0.05;
  AnalyticGaussianDenoiser model{Image(1, n, static_cast<float>(mu)), s2};
  RandomSource rng(seed);
  Image x0(1, n), eps(1, n), xt(1, n);
  const double ab = s.alpha_bar(t);
  for (int i = 0; i < n; ++i) {
    x0[i] = static_cast<float>(mu + std::sqrt(s2) * rng.normal());
    eps[i] = static_cast<float>(rng.normal());
    xt[i] = static_cast<float>(std::sqrt(ab) * x0[i] + std::sqrt(1 - ab) * eps[i]);
  }
  const Image pred = analytic_predict_eps(model, s, xt, t);
  const double m = std::sqrt(ab) * mu, sd = std::sqrt(ab * s2 + 1 - ab);
  const int bins = 12;
  std::vector<double> cnt(bins), se(bins), sx(bins), sp(bins), see(bins);
  for (int i = 0; i < n; ++i) {
    const double z = (xt[i] - m) / sd;
    const int b = static_cast<int>(std::floor((z + 3.0) / 6.0 * bins));
    if (b < 0 || b >= bins) continue;
    cnt[b] += 1, se[b] += eps[i], see[b] += eps[i] * eps[i], sx[b] += xt[i], sp[b] += pred[i];
  }
  int tested = 0;
  for (int b = 0; b < bins; ++b) {
    if (cnt[b] < 200) continue;
    const double mean_eps = se[b] / cnt[b];
    const double var_eps = see[b] / cnt[b] - mean_eps * mean_eps;
    Image xb(1, 1, static_cast<float>(sx[b] / cnt[b]));
    const AnalyticGaussianDenoiser one{Image(1, 1, static_cast<float>(mu)), s2};
    const double closed = analytic_predict_eps(one, s, xb, t)[0];
    CHECK(std::abs(mean_eps - closed) <= 4 * std::sqrt(var_eps / cnt[b]) + 1e-6);
    CHECK(sp[b] / cnt[b] == doctest::Approx(closed).epsilon(1e-4).scale(1.0));
    ++tested;
  }
  CHECK(tested >= 8);
}

}  // namespace

TEST_CASE("analytic denoiser: binned Monte Carlo matches E[eps | x_t]") {
  check_binned_posterior(50, 1);
  check_binned_posterior(200, 2);
}

TEST_CASE("analytic denoiser: full reverse chain regenerates the data distribution") {
  const auto s = make_schedule();
  const int n = 10000;
  const double mu = 0.5, s2 = 0.04;
  const AnalyticDenoiser d({Image(100, 100, static_cast<float>(mu)), s2}, s);
  RandomSource rng(77);
  Image x(100, 100);
  rng.fill_normal(x.values());
  for (int t = s.t_max(); t >= 1; --t) x = reverse_step(s, x, t, d.predict_eps(x, t), rng);
  double m = 0, q = 0;
  for (int i = 0; i < n; ++i) m += x[i];
  m /= n;
  for (int i = 0; i < n; ++i) q += (x[i] - m) * (x[i] - m);
  q /= n - 1;
  CHECK(std::abs(m - mu) <= 0.02 * mu);
  CHECK(std::abs(q - s2) <= 0.05 * s2);

  // Exact sampler moments by the affine recursion; the fixed posterior
  // variance leaves the output a few percent under s2.
  double pm = 0, pv = 1;
  for (int t = s.t_max(); t >= 1; --t) {
    const double ab = s.alpha_bar(t), den = ab * s2 + 1 - ab;
    const double c = (1 - ab * s2 / den) / std::sqrt(1 - ab), e = -std::sqrt(ab) * (1 - ab) * mu / den / std::sqrt(1 - ab);
    const double k = s.beta(t) / std::sqrt(1 - ab), ia = 1 / std::sqrt(s.alpha(t));
    pm = ia * ((1 - k * c) * pm - k * e);
    pv = ia * ia * (1 - k * c) * (1 - k * c) * pv + (t > 1 ? s.posterior_var(t) : 0.0);
  }
  CHECK(std::abs(pm - mu) <= 1e-5);
  CHECK(std::abs(m - pm) <= 4 * std::sqrt(pv / n));
  CHECK(std::abs(q - pv) <= 4 * pv * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("analytic denoiser: zero variance data is a point mass") {
  const auto s = make_schedule();
  const Image mu0(2, 2, 0.3f);
  const AnalyticGaussianDenoiser model{mu0, 0.0};
  RandomSource rng(3);
  const auto noised = forward_to(s, mu0, 150, rng);
  const Image eps = analytic_predict_eps(model, s, noised.x_t, 150);
  for (std::size_t i = 0; i < eps.size(); ++i) CHECK(eps[i] == doctest::Approx(noised.eps[i]).epsilon(1e-4));
  CHECK_THROWS(AnalyticDenoiser({mu0, -1.0}, s));
}

TEST_CASE("denoisers: batch equals single and inputs are untouched") {
  const auto s = make_schedule();
  UNetConfig cfg;
  RandomSource rng(5);
  auto params = unet_init(cfg, rng, {false});
  const auto before = params;
  const UNetDenoiser unet(params, s.t_max());
  const AnalyticDenoiser an({Image(16, 16, 0.5f), 0.02}, s);
  std::vector<Image> xs;
  for (int i = 0; i < 11; ++i) {
    Image x(16, 16);
    rng.fill_normal(x.values());
    xs.push_back(x);
  }
  for (const Denoiser* d : {static_cast<const Denoiser*>(&unet), static_cast<const Denoiser*>(&an)}) {
    std::vector<Image> out(xs.size());
    d->predict_eps_batch(xs, 120, out);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Image single = d->predict_eps(xs[i], 120);
      CHECK(single == out[i]);
      CHECK(all_finite(single));
      CHECK(single.same_shape(xs[i]));
    }
  }
  CHECK(unet.params().tensors.size() == before.tensors.size());
  for (std::size_t i = 0; i < before.tensors.size(); ++i) CHECK(unet.params().tensors[i].data == before.tensors[i].data);
  CHECK_THROWS_AS(unet.predict_eps(xs[0], 0), std::out_of_range);
  CHECK_THROWS_AS(unet.predict_eps(xs[0], 1001), std::out_of_range);
}
