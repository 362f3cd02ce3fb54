#include "sar2rgb/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sar2rgb/errors.hpp"

namespace sar2rgb {

using nn::Index;
using nn::Matrix;

namespace {

void check_steps(std::span<const int> t, Index rows, const NoiseSchedule& sched) {
  if (static_cast<Index>(t.size()) != rows) throw ConfigError("one timestep per row required");
  for (int s : t)
    if (s < 1 || s > sched.steps())
      throw ConfigError("timestep " + std::to_string(s) + " outside [1, " + std::to_string(sched.steps()) + "]");
}

template <class T>
void check_same(const Matrix<T>& a, const Matrix<T>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError(std::string(what) + ": shape mismatch");
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

template <class T>
Matrix<T> q_sample(const Matrix<T>& x0, std::span<const int> t, const Matrix<T>& eps, const NoiseSchedule& sched) {
  check_same(x0, eps, "q_sample");
  check_steps(t, x0.rows(), sched);
  Matrix<T> out(x0.rows(), x0.cols());
  for (Index r = 0; r < x0.rows(); ++r) {
    const double ab = sched.alpha_bar(t[r]);
    out.row(r) = x0.row(r) * T(std::sqrt(ab)) + eps.row(r) * T(std::sqrt(1.0 - ab));
  }
  return out;
}

template <class T>
Matrix<T> predict_x0_from_eps(const Matrix<T>& x_t, std::span<const int> t, const Matrix<T>& eps_hat,
                              const NoiseSchedule& sched, double clip) {
  check_same(x_t, eps_hat, "predict_x0_from_eps");
  check_steps(t, x_t.rows(), sched);
  Matrix<T> out(x_t.rows(), x_t.cols());
  for (Index r = 0; r < x_t.rows(); ++r) {
    const double ab = sched.alpha_bar(t[r]);
    out.row(r) = (x_t.row(r) - eps_hat.row(r) * T(std::sqrt(1.0 - ab))) / T(std::sqrt(ab));
  }
  if (std::isfinite(clip)) out = out.cwiseMax(T(-clip)).cwiseMin(T(clip));
  return out;
}

template <class T>
Matrix<T> posterior_mean(const Matrix<T>& x0, const Matrix<T>& x_t, std::span<const int> t,
                         const NoiseSchedule& sched) {
  check_same(x0, x_t, "posterior_mean");
  check_steps(t, x0.rows(), sched);
  Matrix<T> out(x0.rows(), x0.cols());
  for (Index r = 0; r < x0.rows(); ++r)
    out.row(r) = x0.row(r) * T(sched.posterior_coef_x0(t[r])) + x_t.row(r) * T(sched.posterior_coef_xt(t[r]));
  return out;
}

double interpolated_log_variance(double v, int t, const NoiseSchedule& sched) {
  return v * std::log(sched.beta(t)) + (1.0 - v) * std::log(sched.beta_tilde(t));
}

double gaussian_kl(double mean1, double logvar1, double mean2, double logvar2) {
  const double d = mean1 - mean2;
  return 0.5 * (-1.0 + logvar2 - logvar1 + std::exp(logvar1 - logvar2) + d * d * std::exp(-logvar2));
}

double discretized_gaussian_log_likelihood(double x, double mean, double logvar) {
  const double inv_std = std::exp(-0.5 * logvar);
  const double c = x - mean;
  const double hi = inv_std * (c + 1.0 / 255.0);
  const double lo = inv_std * (c - 1.0 / 255.0);
  constexpr double kFloor = 1e-12;
  if (x < -0.999) return std::log(std::max(normal_cdf(hi), kFloor));
  if (x > 0.999) return std::log(std::max(normal_sf(lo), kFloor));
  // difference of upper tails is more accurate when both edges sit right of the mean
  const double p = lo > 0 ? normal_sf(lo) - normal_sf(hi) : normal_cdf(hi) - normal_cdf(lo);
  return std::log(std::max(p, kFloor));
}

template <class T>
HybridLoss<T> hybrid_loss(const Matrix<T>& eps_hat, const Matrix<T>& v, const Matrix<T>& eps, const Matrix<T>& x0,
                          const Matrix<T>& x_t, std::span<const int> t, const NoiseSchedule& sched,
                          double vlb_weight, const Matrix<T>* vlb_eps) {
  check_same(eps_hat, eps, "hybrid_loss");
  check_same(eps_hat, v, "hybrid_loss");
  check_same(eps_hat, x0, "hybrid_loss");
  check_same(eps_hat, x_t, "hybrid_loss");
  check_steps(t, eps_hat.rows(), sched);
  const double n = static_cast<double>(eps_hat.size());
  HybridLoss<T> out;
  Matrix<T> diff = eps_hat - eps;
  out.mse = diff.template cast<double>().squaredNorm() / n;
  out.d_eps = diff * T(2.0 / n);
  out.d_v = Matrix<T>::Zero(v.rows(), v.cols());

  const Matrix<T>& mean_eps = vlb_eps ? *vlb_eps : eps_hat;
  check_same(eps_hat, mean_eps, "hybrid_loss");
  // mean network output is a constant inside the VLB term
  Matrix<T> x0_hat = predict_x0_from_eps<T>(x_t, t, mean_eps, sched);
  Matrix<T> mu_model = posterior_mean<T>(x0_hat, x_t, t, sched);
  Matrix<T> mu_true = posterior_mean<T>(x0, x_t, t, sched);

  double vlb = 0;
  for (Index r = 0; r < v.rows(); ++r) {
    const int s = t[static_cast<std::size_t>(r)];
    const double log_beta = std::log(sched.beta(s));
    const double log_tilde = std::log(sched.beta_tilde(s));
    for (Index c = 0; c < v.cols(); ++c) {
      const double vi = v(r, c);
      const double lv = vi * log_beta + (1.0 - vi) * log_tilde;
      const double mm = mu_model(r, c);
      if (s == 1) {
        // log β_1 == log β̃_1, so this term has no variance gradient
        vlb -= discretized_gaussian_log_likelihood(x0(r, c), mm, lv);
        continue;
      }
      const double mt = mu_true(r, c);
      vlb += gaussian_kl(mt, log_tilde, mm, lv);
      const double d = mt - mm;
      const double dkl_dlv = 0.5 * (1.0 - std::exp(log_tilde - lv) - d * d * std::exp(-lv));
      out.d_v(r, c) = static_cast<T>(vlb_weight / n * dkl_dlv * (log_beta - log_tilde));
    }
  }
  out.vlb = vlb / n;
  out.total = out.mse + vlb_weight * out.vlb;
  return out;
}

template <class T>
LossTerms standard_loss(const Backbone<T>& model, const DiffusionBatch<T>& batch, const NoiseSchedule& sched,
                        double vlb_weight, bool backprop, const Matrix<T>* vlb_eps) {
  if (model.config().variant != Variant::kStandard) throw ConfigError("standard loss needs a standard backbone");
  Matrix<T> x_t = q_sample<T>(batch.x0, batch.t, batch.eps, sched);
  auto out = model.forward(x_t, batch.sar, batch.t, batch.labels);
  auto h = hybrid_loss<T>(out.eps.value(), out.v.value(), batch.eps, batch.x0, x_t, batch.t, sched, vlb_weight,
                          vlb_eps);
  if (!std::isfinite(h.total)) {
    std::string ts;
    for (int s : batch.t) ts += (ts.empty() ? "" : ",") + std::to_string(s);
    throw NumericError("non-finite diffusion loss (t = " + ts + ")");
  }
  if (backprop) nn::backward<T>({{out.eps, h.d_eps}, {out.v, h.d_v}});
  return {h.total, h.mse, h.vlb};
}

template <class T>
void draw_timesteps_and_noise(DiffusionBatch<T>& batch, const NoiseSchedule& sched, Rng& rng) {
  const Index rows = batch.x0.rows();
  batch.t.resize(static_cast<std::size_t>(rows));
  for (auto& s : batch.t) s = rng.uniform_int(1, sched.steps());
  batch.eps.resize(rows, batch.x0.cols());
  for (Index i = 0; i < batch.eps.size(); ++i) batch.eps.data()[i] = static_cast<T>(rng.normal());
}

LossTerms training_loss(const Backbone<float>& model, DiffusionBatch<float>& batch, const NoiseSchedule& sched,
                        Rng& rng, double vlb_weight) {
  draw_timesteps_and_noise(batch, sched, rng);
  return standard_loss<float>(model, batch, sched, vlb_weight, true);
}

StandardModel bind_standard(const Backbone<float>& model, const Matrix<float>& sar, std::vector<int> labels) {
  if (static_cast<Index>(labels.size()) != sar.rows()) throw ConfigError("one label per SAR row required");
  return [&model, sar, labels = std::move(labels)](const Matrix<float>& x_t, int t) {
    nn::NoGradGuard guard;
    std::vector<int> ts(static_cast<std::size_t>(x_t.rows()), t);
    auto out = model.forward(x_t, sar, ts, labels);
    return StandardPrediction{out.eps.value(), out.v.value()};
  };
}

SampleResult ddpm_sample(const StandardModel& model, int rows, int cols, const NoiseSchedule& sched,
                         std::span<const std::uint64_t> seeds, const SampleOptions& options) {
  if (static_cast<int>(seeds.size()) != rows) throw ConfigError("one seed per sample required");
  std::vector<Rng> rngs;
  rngs.reserve(seeds.size());
  for (auto s : seeds) rngs.emplace_back(s);

  Matrix<float> x(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) x(r, c) = static_cast<float>(rngs[r].normal());

  SampleResult result;
  auto record = [&](int t) {
    if (std::find(options.record_steps.begin(), options.record_steps.end(), t) != options.record_steps.end())
      result.trajectory.emplace_back(t, x);
  };
  record(sched.steps());

  for (int t = sched.steps(); t >= 1; --t) {
    StandardPrediction p = model(x, t);
    if (p.eps.rows() != rows || p.eps.cols() != cols || p.v.rows() != rows || p.v.cols() != cols)
      throw ConfigError("model output shape mismatch");
    std::vector<int> ts(static_cast<std::size_t>(rows), t);
    Matrix<float> x0_hat = predict_x0_from_eps<float>(x, ts, p.eps, sched, options.clip);
    Matrix<float> mean = posterior_mean<float>(x0_hat, x, ts, sched);
    if (t > 1) {
      const double log_beta = std::log(sched.beta(t));
      const double log_tilde = std::log(sched.beta_tilde(t));
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const double v = p.v(r, c);
          const double sd = std::exp(0.5 * (v * log_beta + (1.0 - v) * log_tilde));
          mean(r, c) += static_cast<float>(sd * rngs[r].normal());
        }
      }
    }
    x = std::move(mean);
    if (!x.allFinite()) throw NumericError("non-finite sampler state at t = " + std::to_string(t));
    if (t > 1) record(t - 1);
  }
  result.final = x;
  return result;
}

#define SAR2RGB_INSTANTIATE_DIFFUSION(T)                                                                     \
  template Matrix<T> q_sample<T>(const Matrix<T>&, std::span<const int>, const Matrix<T>&,                 \
                                 const NoiseSchedule&);                                                      \
  template Matrix<T> predict_x0_from_eps<T>(const Matrix<T>&, std::span<const int>, const Matrix<T>&,      \
                                            const NoiseSchedule&, double);                                   \
  template Matrix<T> posterior_mean<T>(const Matrix<T>&, const Matrix<T>&, std::span<const int>,           \
                                       const NoiseSchedule&);                                                \
  template HybridLoss<T> hybrid_loss<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,              \
                                        const Matrix<T>&, const Matrix<T>&, std::span<const int>,           \
                                        const NoiseSchedule&, double, const Matrix<T>*);                     \
  template LossTerms standard_loss<T>(const Backbone<T>&, const DiffusionBatch<T>&, const NoiseSchedule&,  \
                                      double, bool, const Matrix<T>*);                                       \
  template void draw_timesteps_and_noise<T>(DiffusionBatch<T>&, const NoiseSchedule&, Rng&);

SAR2RGB_INSTANTIATE_DIFFUSION(float)
SAR2RGB_INSTANTIATE_DIFFUSION(double)

}  // namespace sar2rgb
