#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "sar2rgb/backbone.hpp"
#include "sar2rgb/nn/tensor.hpp"
#include "sar2rgb/rng.hpp"
#include "sar2rgb/schedule.hpp"

// Gaussian diffusion on row-per-item latent matrices. Every per-item
// function takes one timestep per row.
namespace sar2rgb {

template <class T>
nn::Matrix<T> q_sample(const nn::Matrix<T>& x0, std::span<const int> t, const nn::Matrix<T>& eps,
                       const NoiseSchedule& sched);

/// (x_t - sqrt(1 - ᾱ_t) eps_hat) / sqrt(ᾱ_t), clamped to [-clip, clip].
/// Pass infinity to skip the clamp.
template <class T>
nn::Matrix<T> predict_x0_from_eps(const nn::Matrix<T>& x_t, std::span<const int> t, const nn::Matrix<T>& eps_hat,
                                  const NoiseSchedule& sched,
                                  double clip = std::numeric_limits<double>::infinity());

/// Mean of q(x_{t-1} | x_t, x0).
template <class T>
nn::Matrix<T> posterior_mean(const nn::Matrix<T>& x0, const nn::Matrix<T>& x_t, std::span<const int> t,
                             const NoiseSchedule& sched);

/// v log β_t + (1 - v) log β̃_t
double interpolated_log_variance(double v, int t, const NoiseSchedule& sched);

/// KL(N(m1, e^lv1) || N(m2, e^lv2)) in nats.
double gaussian_kl(double mean1, double logvar1, double mean2, double logvar2);

/// log P(x) under N(mean, e^logvar) discretized to 256 bins on [-1, 1];
/// the edge bins extend to infinity.
double discretized_gaussian_log_likelihood(double x, double mean, double logvar);

template <class T>
struct HybridLoss {
  double total = 0;
  double mse = 0;
  double vlb = 0;
  nn::Matrix<T> d_eps;  // dL/d eps_hat
  nn::Matrix<T> d_v;    // dL/d v (variance path only)
};

/// L = mean (eps_hat - eps)^2 + weight * mean VLB term. The VLB mean uses
/// `vlb_eps` (defaults to eps_hat) treated as a constant, so the VLB only
/// trains the variance output. t = 1 contributes the negative discretized
/// log-likelihood of x0.
template <class T>
HybridLoss<T> hybrid_loss(const nn::Matrix<T>& eps_hat, const nn::Matrix<T>& v, const nn::Matrix<T>& eps,
                          const nn::Matrix<T>& x0, const nn::Matrix<T>& x_t, std::span<const int> t,
                          const NoiseSchedule& sched, double vlb_weight, const nn::Matrix<T>* vlb_eps = nullptr);

/// One training example batch in latent space.
template <class T>
struct DiffusionBatch {
  nn::Matrix<T> x0;    // RGB latents
  nn::Matrix<T> sar;   // SAR latents
  std::vector<int> labels;
  std::vector<int> t;
  nn::Matrix<T> eps;   // standard: Gaussian noise; unused by cold
};

struct LossTerms {
  double total = 0;
  double mse = 0;
  double vlb = 0;
};

/// Evaluates the hybrid loss of `model` on `batch` and, when `backprop` is
/// set, accumulates parameter gradients. `vlb_eps` freezes the VLB mean.
template <class T>
LossTerms standard_loss(const Backbone<T>& model, const DiffusionBatch<T>& batch, const NoiseSchedule& sched,
                        double vlb_weight, bool backprop, const nn::Matrix<T>* vlb_eps = nullptr);

/// Draws t ~ U{1..T} per item and eps ~ N(0, I) from rng.
template <class T>
void draw_timesteps_and_noise(DiffusionBatch<T>& batch, const NoiseSchedule& sched, Rng& rng);

/// Samples t and eps from rng, evaluates the loss and backpropagates.
LossTerms training_loss(const Backbone<float>& model, DiffusionBatch<float>& batch, const NoiseSchedule& sched,
                        Rng& rng, double vlb_weight = 1.0);

struct StandardPrediction {
  nn::Matrix<float> eps;
  nn::Matrix<float> v;
};

/// Callback evaluating the network at (x_t, t) for every row.
using StandardModel = std::function<StandardPrediction(const nn::Matrix<float>& x_t, int t)>;

/// Binds a backbone to fixed SAR latents and labels.
StandardModel bind_standard(const Backbone<float>& model, const nn::Matrix<float>& sar, std::vector<int> labels);

struct SampleOptions {
  double clip = 1.0;
  /// Record x_t for these steps (T..1 order); x_T always first if recorded.
  std::vector<int> record_steps;
};

struct SampleResult {
  nn::Matrix<float> final;
  std::vector<std::pair<int, nn::Matrix<float>>> trajectory;
};

/// Ancestral sampling. Row i uses its own generator seeded with seeds[i],
/// so results do not depend on batch composition.
SampleResult ddpm_sample(const StandardModel& model, int rows, int cols, const NoiseSchedule& sched,
                         std::span<const std::uint64_t> seeds, const SampleOptions& options = {});

}  // namespace sar2rgb
