#include "sar2rgb/schedule.hpp"

#include <cmath>
#include <string>

#include "sar2rgb/errors.hpp"

namespace sar2rgb {

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  for (std::size_t i = 0; i < betas.size(); ++i)
    if (!(betas[i] > 0.0 && betas[i] <= 1.0))
      throw ConfigError("beta_" + std::to_string(i + 1) + " outside (0, 1]");
  NoiseSchedule s;
  s.beta_ = std::move(betas);
  const std::size_t n = s.beta_.size();
  s.alpha_bar_.resize(n);
  s.beta_tilde_.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double prev = prod;
    prod *= 1.0 - s.beta_[i];
    s.alpha_bar_[i] = prod;
    s.beta_tilde_[i] = i == 0 ? s.beta_[0] : s.beta_[i] * (1.0 - prev) / (1.0 - prod);
  }
  return s;
}

double NoiseSchedule::posterior_coef_x0(int t) const {
  return beta(t) * std::sqrt(alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

double NoiseSchedule::posterior_coef_xt(int t) const {
  return (1.0 - alpha_bar(t - 1)) * std::sqrt(alpha(t)) / (1.0 - alpha_bar(t));
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule step count must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0))
    throw ConfigError("beta endpoints must lie in (0, 1)");
  if (steps > 1 && !(beta_start < beta_end)) throw ConfigError("beta_start must be below beta_end");
  std::vector<double> b(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    b[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
  return NoiseSchedule::from_betas(std::move(b));
}

}  // namespace sar2rgb
