#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sar2rgb/backbone.hpp"
#include "sar2rgb/diffusion.hpp"
#include "sar2rgb/schedule.hpp"

// Cold diffusion: the RGB latent is blended toward the SAR latent instead
// of being noised, and the network restores the clean latent.
namespace sar2rgb {

/// sqrt(ᾱ_t) x + sqrt(1 - ᾱ_t) z with ᾱ_0 = 1; one step per row.
template <class T>
nn::Matrix<T> degrade(const nn::Matrix<T>& x, const nn::Matrix<T>& z, std::span<const int> t,
                      const NoiseSchedule& sched);
/// Same step for every row.
template <class T>
nn::Matrix<T> degrade(const nn::Matrix<T>& x, const nn::Matrix<T>& z, int t, const NoiseSchedule& sched);

/// mean (x0_hat - x0)^2 on degraded inputs at batch.t; batch.eps is ignored.
template <class T>
LossTerms cold_loss_terms(const Backbone<T>& model, const DiffusionBatch<T>& batch, const NoiseSchedule& sched,
                          bool backprop);

/// Draws t ~ U{1..T} per item from rng, evaluates and backpropagates.
LossTerms cold_loss(const Backbone<float>& model, DiffusionBatch<float>& batch, const NoiseSchedule& sched,
                    Rng& rng);

/// Restorer R(x_t, t) -> x0_hat for every row.
using ColdModel = std::function<nn::Matrix<float>(const nn::Matrix<float>& x_t, int t)>;

ColdModel bind_cold(const Backbone<float>& model, const nn::Matrix<float>& sar, std::vector<int> labels);

struct ColdSampleOptions {
  double clip = 1.0;
  std::vector<int> record_steps;
};

/// x_T = z; x_{t-1} = D(R(x_t, t), t - 1).
SampleResult naive_cold_sample(const ColdModel& model, const nn::Matrix<float>& z, const NoiseSchedule& sched,
                               const ColdSampleOptions& options = {});

/// x_T = z; x_{t-1} = x_t - D(x0_hat, t) + D(x0_hat, t - 1).
SampleResult improved_cold_sample(const ColdModel& model, const nn::Matrix<float>& z, const NoiseSchedule& sched,
                                  const ColdSampleOptions& options = {});

/// One improved step written out for the linear blend:
/// x_t + (sqrt ᾱ_{t-1} - sqrt ᾱ_t) x0_hat + (sqrt(1-ᾱ_{t-1}) - sqrt(1-ᾱ_t)) z.
template <class T>
nn::Matrix<T> improved_step_closed_form(const nn::Matrix<T>& x_t, const nn::Matrix<T>& x0_hat,
                                        const nn::Matrix<T>& z, int t, const NoiseSchedule& sched);
/// Same step through the generic degrade-based update.
template <class T>
nn::Matrix<T> improved_step(const nn::Matrix<T>& x_t, const nn::Matrix<T>& x0_hat, const nn::Matrix<T>& z, int t,
                            const NoiseSchedule& sched);

}  // namespace sar2rgb
