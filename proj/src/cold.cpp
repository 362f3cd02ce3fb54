#include "sar2rgb/cold.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sar2rgb/errors.hpp"

namespace sar2rgb {

using nn::Index;
using nn::Matrix;

template <class T>
Matrix<T> degrade(const Matrix<T>& x, const Matrix<T>& z, std::span<const int> t, const NoiseSchedule& sched) {
  if (x.rows() != z.rows() || x.cols() != z.cols()) throw ConfigError("degrade: shape mismatch");
  if (static_cast<Index>(t.size()) != x.rows()) throw ConfigError("one timestep per row required");
  Matrix<T> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const int s = t[static_cast<std::size_t>(r)];
    if (s < 0 || s > sched.steps()) throw ConfigError("timestep " + std::to_string(s) + " out of range");
    if (s == 0) {
      out.row(r) = x.row(r);
      continue;
    }
    const double ab = sched.alpha_bar(s);
    out.row(r) = x.row(r) * T(std::sqrt(ab)) + z.row(r) * T(std::sqrt(1.0 - ab));
  }
  return out;
}

template <class T>
Matrix<T> degrade(const Matrix<T>& x, const Matrix<T>& z, int t, const NoiseSchedule& sched) {
  std::vector<int> ts(static_cast<std::size_t>(x.rows()), t);
  return degrade<T>(x, z, std::span<const int>(ts), sched);
}

template <class T>
LossTerms cold_loss_terms(const Backbone<T>& model, const DiffusionBatch<T>& batch, const NoiseSchedule& sched,
                          bool backprop) {
  if (model.config().variant != Variant::kCold) throw ConfigError("cold loss needs a cold backbone");
  for (int s : batch.t)
    if (s < 1 || s > sched.steps()) throw ConfigError("timestep " + std::to_string(s) + " out of range");
  Matrix<T> x_t = degrade<T>(batch.x0, batch.sar, std::span<const int>(batch.t), sched);
  auto out = model.forward(x_t, batch.sar, batch.t, batch.labels);
  Matrix<T> diff = out.x0.value() - batch.x0;
  const double n = static_cast<double>(diff.size());
  const double mse = diff.template cast<double>().squaredNorm() / n;
  if (!std::isfinite(mse)) throw NumericError("non-finite cold loss");
  if (backprop) nn::backward<T>(out.x0, Matrix<T>(diff * T(2.0 / n)));
  return {mse, mse, 0.0};
}

LossTerms cold_loss(const Backbone<float>& model, DiffusionBatch<float>& batch, const NoiseSchedule& sched,
                    Rng& rng) {
  batch.t.resize(static_cast<std::size_t>(batch.x0.rows()));
  for (auto& s : batch.t) s = rng.uniform_int(1, sched.steps());
  return cold_loss_terms<float>(model, batch, sched, true);
}

ColdModel bind_cold(const Backbone<float>& model, const Matrix<float>& sar, std::vector<int> labels) {
  if (static_cast<Index>(labels.size()) != sar.rows()) throw ConfigError("one label per SAR row required");
  return [&model, sar, labels = std::move(labels)](const Matrix<float>& x_t, int t) {
    nn::NoGradGuard guard;
    std::vector<int> ts(static_cast<std::size_t>(x_t.rows()), t);
    return Matrix<float>(model.forward(x_t, sar, ts, labels).x0.value());
  };
}

template <class T>
Matrix<T> improved_step(const Matrix<T>& x_t, const Matrix<T>& x0_hat, const Matrix<T>& z, int t,
                        const NoiseSchedule& sched) {
  return x_t - degrade<T>(x0_hat, z, t, sched) + degrade<T>(x0_hat, z, t - 1, sched);
}

template <class T>
Matrix<T> improved_step_closed_form(const Matrix<T>& x_t, const Matrix<T>& x0_hat, const Matrix<T>& z, int t,
                                    const NoiseSchedule& sched) {
  const double a_prev = sched.alpha_bar(t - 1);
  const double a = sched.alpha_bar(t);
  return x_t + x0_hat * T(std::sqrt(a_prev) - std::sqrt(a)) + z * T(std::sqrt(1.0 - a_prev) - std::sqrt(1.0 - a));
}

namespace {

template <class Step>
SampleResult run_cold(const ColdModel& model, const Matrix<float>& z, const NoiseSchedule& sched,
                      const ColdSampleOptions& options, Step step) {
  SampleResult result;
  Matrix<float> x = z;
  auto record = [&](int t) {
    if (std::find(options.record_steps.begin(), options.record_steps.end(), t) != options.record_steps.end())
      result.trajectory.emplace_back(t, x);
  };
  record(sched.steps());
  for (int t = sched.steps(); t >= 1; --t) {
    Matrix<float> x0_hat = model(x, t);
    if (x0_hat.rows() != z.rows() || x0_hat.cols() != z.cols()) throw ConfigError("restorer output shape mismatch");
    if (std::isfinite(options.clip))
      x0_hat = x0_hat.cwiseMax(float(-options.clip)).cwiseMin(float(options.clip));
    x = step(x, x0_hat, t);
    if (!x.allFinite()) throw NumericError("non-finite sampler state at t = " + std::to_string(t));
    record(t - 1);
  }
  result.final = x;
  return result;
}

}  // namespace

SampleResult naive_cold_sample(const ColdModel& model, const Matrix<float>& z, const NoiseSchedule& sched,
                               const ColdSampleOptions& options) {
  return run_cold(model, z, sched, options, [&](const Matrix<float>&, const Matrix<float>& x0_hat, int t) {
    return degrade<float>(x0_hat, z, t - 1, sched);
  });
}

SampleResult improved_cold_sample(const ColdModel& model, const Matrix<float>& z, const NoiseSchedule& sched,
                                  const ColdSampleOptions& options) {
  return run_cold(model, z, sched, options, [&](const Matrix<float>& x, const Matrix<float>& x0_hat, int t) {
    return improved_step<float>(x, x0_hat, z, t, sched);
  });
}

#define SAR2RGB_INSTANTIATE_COLD(T)                                                                     \
  template Matrix<T> degrade<T>(const Matrix<T>&, const Matrix<T>&, std::span<const int>,              \
                                const NoiseSchedule&);                                                  \
  template Matrix<T> degrade<T>(const Matrix<T>&, const Matrix<T>&, int, const NoiseSchedule&);         \
  template LossTerms cold_loss_terms<T>(const Backbone<T>&, const DiffusionBatch<T>&,                   \
                                        const NoiseSchedule&, bool);                                    \
  template Matrix<T> improved_step<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, int,        \
                                      const NoiseSchedule&);                                            \
  template Matrix<T> improved_step_closed_form<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, \
                                                  int, const NoiseSchedule&);

SAR2RGB_INSTANTIATE_COLD(float)
SAR2RGB_INSTANTIATE_COLD(double)

}  // namespace sar2rgb
