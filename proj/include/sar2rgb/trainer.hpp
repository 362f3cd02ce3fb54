#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "sar2rgb/backbone.hpp"
#include "sar2rgb/diffusion.hpp"
#include "sar2rgb/meta.hpp"
#include "sar2rgb/nn/module.hpp"
#include "sar2rgb/schedule.hpp"

namespace sar2rgb {

/// Latent training set, one row per pair.
struct LatentDataset {
  nn::Matrix<float> rgb;
  nn::Matrix<float> sar;
  std::vector<int> labels;  // kNullClass when unconditioned
  int channels = 0;
  int size = 0;

  int count() const { return static_cast<int>(rgb.rows()); }
};

struct TrainConfig {
  std::int64_t iterations = 250000;
  int batch_size = 192;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  /// 0 writes only the final checkpoint.
  std::int64_t checkpoint_interval = 0;
  double vlb_weight = 1.0;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  void validate() const;
  MetaRecord to_meta() const;
};

struct LossRecord {
  std::int64_t step = 0;
  LossTerms terms;
};

/// Full training state; checkpoints capture all of it.
struct TrainState {
  Backbone<float> model;
  nn::AdamW<float> optimizer;
  Rng rng;
  std::int64_t step = 0;
};

TrainState initial_state(const BackboneConfig& backbone, const TrainConfig& cfg);

/// Runs one optimisation step on a batch drawn from the state's generator.
LossTerms train_step(TrainState& state, const LatentDataset& data, const NoiseSchedule& sched,
                     const TrainConfig& cfg);

using StepCallback = std::function<void(const LossRecord&)>;

/// Trains until cfg.iterations. When `out_dir` is set, writes
/// `step_<n>/{weights.bin,optimizer.bin,rng.txt,meta.txt}` every
/// checkpoint_interval steps, a `final/` checkpoint and appends to
/// `loss.tsv` (step, l_final, l_mse, l_vlb). `resume_from` continues from a
/// checkpoint directory whose recorded configuration must match.
std::vector<LossRecord> train(const LatentDataset& data, const BackboneConfig& backbone, const TrainConfig& cfg,
                              const std::optional<std::filesystem::path>& out_dir,
                              const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                              TrainState* final_state = nullptr, const StepCallback& on_step = {});

void save_checkpoint(const std::filesystem::path& dir, const TrainState& state, const TrainConfig& cfg,
                     const LossTerms& last);
TrainState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& expected_cfg,
                           const BackboneConfig& expected_backbone);

/// Backbone weights plus config from any checkpoint directory.
Backbone<float> load_backbone(const std::filesystem::path& dir);
MetaRecord load_checkpoint_meta(const std::filesystem::path& dir);

/// Mean total loss over log[begin, begin + count).
double window_mean(const std::vector<LossRecord>& log, std::size_t begin, std::size_t count);

}  // namespace sar2rgb
