#include "autoddpm/diffusion.hpp"

#include <stdexcept>
#include <string>

namespace autoddpm {

int NoiseSchedule::check(int t) const {
  if (t < 1 || t > t_max_) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(t_max_) + "]");
  }
  return t;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bar_.at(check(t));
}

NoiseSchedule make_schedule(int t_max, double beta_1, double beta_T) {
  if (t_max < 2) throw std::invalid_argument("make_schedule: t_max must be >= 2");
  if (!(beta_1 > 0.0) || !(beta_T < 1.0)) {
    throw std::invalid_argument("make_schedule: betas must lie in (0, 1)");
  }
  if (!(beta_1 <= beta_T)) throw std::invalid_argument("make_schedule: beta_1 must not exceed beta_T");

  NoiseSchedule s;
  s.t_max_ = t_max;
  const auto n = static_cast<std::size_t>(t_max) + 1;
  s.beta_.assign(n, 0.0);
  s.alpha_.assign(n, 1.0);
  s.alpha_bar_.assign(n, 1.0);
  s.posterior_var_.assign(n, 0.0);
  for (int t = 1; t <= t_max; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(t_max - 1);
    const double beta = t == t_max ? beta_T : beta_1 + (beta_T - beta_1) * frac;
    s.beta_[t] = beta;
    s.alpha_[t] = 1.0 - beta;
    s.alpha_bar_[t] = s.alpha_bar_[t - 1] * s.alpha_[t];
    s.posterior_var_[t] = t == 1 ? beta : (1.0 - s.alpha_bar_[t - 1]) / (1.0 - s.alpha_bar_[t]) * beta;
  }
  return s;
}

}  // namespace autoddpm
