#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sar2rgb/nn/tensor.hpp"
#include "sar2rgb/raster.hpp"

namespace sar2rgb {

/// Codec-space grid. Learned codecs produce 4 channels at 1/8 resolution.
using LatentGrid = Image;

enum class CodecMode { kIdentity, kLearned };

std::string to_string(CodecMode mode);
CodecMode codec_mode_from_string(const std::string& s);

struct CodecConfig {
  CodecMode mode = CodecMode::kIdentity;
  int downsample_factor = 1;
  int latent_channels = 3;
  int image_channels = 3;
  /// One width per 2x downsampling stage (learned mode).
  std::vector<int> hidden_widths;
  double kl_weight = 1e-6;
  /// Multiplies encoder means; decode divides it back out.
  double scale = 1.0;

  static CodecConfig identity(int image_channels = 3);
  static CodecConfig learned(std::vector<int> hidden_widths = {32, 64, 64}, int latent_channels = 4);
  void validate() const;
};

struct CodecTrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct CodecLossTerms {
  double total = 0;
  double reconstruction = 0;  // mean squared pixel error
  double kl = 0;              // mean per latent element
};

class ConvVae;

class Codec {
 public:
  explicit Codec(CodecConfig cfg = CodecConfig::identity(), std::uint64_t init_seed = 0);
  ~Codec();
  Codec(const Codec&);
  Codec& operator=(const Codec&);
  Codec(Codec&&) noexcept;
  Codec& operator=(Codec&&) noexcept;

  const CodecConfig& config() const { return cfg_; }
  bool is_identity() const { return cfg_.mode == CodecMode::kIdentity; }
  int latent_channels() const { return cfg_.latent_channels; }
  int latent_size(int image_size) const;

  /// Posterior mean times the scale constant; identity mode copies the input.
  LatentGrid encode(const Image& img) const;
  /// Output clamped to [-1, 1]; identity mode copies the input.
  Image decode(const LatentGrid& z) const;

  /// Row-per-item versions used by the diffusion modules.
  nn::Matrix<float> encode_batch(std::span<const Image> images) const;
  std::vector<Image> decode_batch(const nn::Matrix<float>& latents, int latent_size) const;

  /// Runs one optimisation step on the batch and returns its loss terms.
  CodecLossTerms train_step(std::span<const Image> batch, std::uint64_t noise_seed, double lr);
  /// Loss terms without updating weights (same noise draw as train_step).
  CodecLossTerms evaluate_loss(std::span<const Image> batch, std::uint64_t noise_seed) const;

  std::size_t parameter_count() const;
  std::uint64_t init_seed() const { return init_seed_; }
  std::int64_t steps_trained() const { return steps_trained_; }

  /// Writes `weights.bin` (learned mode) and `meta.txt` into `dir`.
  void save(const std::filesystem::path& dir) const;
  static Codec load(const std::filesystem::path& dir);

 private:
  CodecConfig cfg_;
  std::uint64_t init_seed_ = 0;
  std::int64_t steps_trained_ = 0;
  std::unique_ptr<ConvVae> net_;
};

struct CodecTrainResult {
  Codec codec;
  std::vector<CodecLossTerms> history;
};

/// Trains a learned codec on standardized images. Throws NumericError on a
/// non-finite loss and ConfigError on an empty dataset.
CodecTrainResult train_codec(std::span<const Image> images, const CodecConfig& cfg,
                             const CodecTrainConfig& train);

}  // namespace sar2rgb
