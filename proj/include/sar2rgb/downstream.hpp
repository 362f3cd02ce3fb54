#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sar2rgb/imagery.hpp"
#include "sar2rgb/nn/module.hpp"
#include "sar2rgb/raster.hpp"

namespace sar2rgb {

// ---------------------------------------------------------------------------
// Input configurations

enum class InputSource { kOriginalSar, kOriginalRgb, kGeneratedRgb };

struct InputConfiguration {
  int id = 0;
  std::string name;  // column label in the accuracy table
  int channels = 0;
  std::vector<InputSource> sources;

  bool uses_generated() const;
};

/// The five configurations, indexed by id - 1:
/// 1 S1, 2 S2, 3 GenS2, 4 S1&S2, 5 S1&GenS2.
const std::array<InputConfiguration, 5>& input_configurations();
const InputConfiguration& input_configuration(int id);
/// Column order of the accuracy table: S1, S2, S1&S2, GenS2, S1&GenS2.
std::array<int, 5> table_column_order();

/// Standardized classifier input. Six-channel layouts are [SAR x3 | RGB].
/// `generated_rgb` is already standardized and must be present exactly when
/// the configuration uses it.
Image assemble_input(const InputConfiguration& config, const RawPair& pair,
                     const std::optional<Image>& generated_rgb = std::nullopt);

// ---------------------------------------------------------------------------
// Classifier

struct ClassifierSpec {
  int input_channels = 3;
  int class_count = 2;
  int epochs = 20;
  double learning_rate = 5e-5;
  double weight_decay = 1e-4;
  int batch_size = 10;
  std::uint64_t seed = 0;
  std::vector<int> widths = {16, 32, 64};
};

/// Residual CNN: 3x3 stem, one residual block per width (stride 2 between
/// widths, 1x1 projection on the skip), global average pooling, linear head.
class Classifier {
 public:
  Classifier(const ClassifierSpec& spec, int image_size);

  const ClassifierSpec& spec() const { return spec_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }

  /// Logits, one row per image.
  nn::Var<float> forward(const nn::Matrix<float>& images) const;
  std::vector<int> predict(std::span<const Image> images) const;
  /// The stem kernel (out x in*9).
  const nn::Var<float>& stem() const { return stem_w_; }

 private:
  struct Conv {
    nn::Var<float> w, b;
    int cin = 0, cout = 0, kernel = 3, stride = 1;
  };
  struct Block {
    Conv a, b;
    std::optional<Conv> skip;
  };

  nn::Var<float> conv(const Conv& c, const nn::Var<float>& x, int& size) const;

  ClassifierSpec spec_;
  int image_size_;
  nn::ParameterSet<float> params_;
  nn::Var<float> stem_w_, stem_b_;
  std::vector<Block> blocks_;
  nn::Var<float> head_w_, head_b_;
};

/// Widens a 3-channel kernel (out x 3*k*k) to 6 channels by copying it into
/// both halves and scaling by 0.5.
nn::Matrix<float> widen_stem_kernel(const nn::Matrix<float>& kernel3);

/// Softmax cross-entropy averaged over rows, with dL/dlogits.
double cross_entropy(const nn::Matrix<float>& logits, std::span<const int> labels, nn::Matrix<float>* grad);

struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
  double eval_accuracy = 0;
};

struct LabeledSet {
  std::vector<Image> inputs;
  std::vector<int> labels;
};

struct TrainedClassifier {
  Classifier model;
  std::vector<EpochLog> history;
};

/// Throws ConfigError when fewer than two classes are present.
TrainedClassifier train_classifier(const LabeledSet& train, const LabeledSet& eval, const ClassifierSpec& spec);

double evaluate_accuracy(const Classifier& model, const LabeledSet& set);

// ---------------------------------------------------------------------------
// Experiments

/// Produces standardized RGB images for a run of pairs. Item i must depend
/// only on (pairs[i], seed + i).
struct Generator {
  std::string id;
  std::function<std::vector<Image>(std::span<const RawPair> pairs, std::uint64_t seed)> generate;
};

struct ClassificationOptions {
  std::vector<int> configs = {1, 2, 3, 4, 5};
  int repeats = 3;
  ClassifierSpec classifier;  // input_channels is set per configuration
  std::uint64_t generation_seed = 0;
  std::string setup = "generated";
  /// Also train config 2 on permuted training labels (chance-level check).
  bool shuffled_control = false;
};

struct ConfigAccuracy {
  int config = 0;
  std::vector<double> runs;
  double mean = 0;
  double stddev = 0;  // population over repeats
};

struct ClassificationReport {
  std::string setup;
  std::optional<std::string> generator_id;
  int repeats = 0;
  int class_count = 0;
  std::size_t train_count = 0;
  std::size_t eval_count = 0;
  std::vector<ConfigAccuracy> results;  // requested configs, ascending id
  std::optional<ConfigAccuracy> shuffled_control;
  std::vector<std::uint64_t> generation_seeds;  // one per repeat
  std::uint64_t classifier_seed = 0;

  const ConfigAccuracy* find(int config) const;
};

/// Labels come from pair.class_label. Configs 1, 2 and 4 reuse one
/// classifier seed on every repeat; configs 3 and 5 regenerate the RGB
/// inputs of both splits with a distinct seed per repeat.
ClassificationReport run_classification_experiment(const std::vector<RawPair>& train,
                                                   const std::vector<RawPair>& eval, const Generator* generator,
                                                   const ClassificationOptions& options);

struct CloudItemMetrics {
  std::string id;
  double mae = 0;
  double psnr = 0;
  double ssim = 0;
};

struct CloudRemovalReport {
  std::string generator_id;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double mae_mean = 0;
  double psnr_mean = 0;  // +inf when every item is exact
  double ssim_mean = 0;
  std::vector<CloudItemMetrics> items;
};

/// Generates RGB from SAR only and scores it against the clean RGB in the
/// [0, 1] domain. Every pair must carry a cloudy image.
CloudRemovalReport run_cloud_removal_eval(const std::vector<RawPair>& pairs, const Generator& generator,
                                          std::uint64_t seed);

/// Returns the clean RGB (standardized).
Generator oracle_generator();
/// Returns the cloudy RGB (standardized).
Generator passthrough_generator();
/// Clean RGB plus N(0, sigma^2) noise in the standardized domain, clamped to
/// [-1, 1]; item i draws from Rng(seed + i). A stand-in for a trained model
/// whose output is close to, but not exactly, the target.
Generator noisy_oracle_generator(double sigma);

}  // namespace sar2rgb
