#pragma once

#include <vector>

namespace sar2rgb {

/// Per-step noise schedule. Steps are 1-based: index t refers to β_t, and
/// ᾱ_0 is defined as 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  /// Betas must lie in (0, 1]. A final beta of exactly 1 (ᾱ_T = 0) is
  /// accepted for test schedules.
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_.at(t - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(t - 1); }
  /// β_t (1 - ᾱ_{t-1}) / (1 - ᾱ_t), with β̃_1 = β_1.
  double beta_tilde(int t) const { return beta_tilde_.at(t - 1); }

  /// Coefficients of x0 and x_t in the mean of q(x_{t-1} | x_t, x0).
  double posterior_coef_x0(int t) const;
  double posterior_coef_xt(int t) const;

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> beta_tilde_;
};

/// Linearly spaced betas including both endpoints.
NoiseSchedule make_linear_schedule(int steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

}  // namespace sar2rgb
