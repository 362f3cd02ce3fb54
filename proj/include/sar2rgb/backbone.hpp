#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sar2rgb/meta.hpp"
#include "sar2rgb/nn/module.hpp"
#include "sar2rgb/nn/tensor.hpp"

namespace sar2rgb {

enum class Variant { kStandard, kCold };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Label value meaning "no class"; maps to the extra null embedding row.
inline constexpr int kNullClass = -1;

struct BackboneConfig {
  int depth = 12;
  int heads = 6;
  int hidden = 384;
  int patch = 4;
  int latent_channels = 4;  // RGB latent; the SAR latent adds as many again
  int input_size = 32;      // latent spatial size
  Variant variant = Variant::kStandard;
  int class_count = 0;      // real classes; the table holds one more (null)
  int max_timestep = 1000;
  int frequency_dim = 256;
  int mlp_ratio = 4;

  int in_channels() const { return 2 * latent_channels; }
  int out_channels() const { return variant == Variant::kStandard ? 2 * latent_channels : latent_channels; }
  int grid() const { return input_size / patch; }
  int tokens() const { return grid() * grid(); }
  int patch_dim() const { return patch * patch * in_channels(); }
  void validate() const;

  /// DiT-S/4 on a 32x32x4 latent.
  static BackboneConfig small_s4();
  /// depth 4, hidden 128, heads 4, patch 4 on a 32x32x3 pixel grid.
  static BackboneConfig desk();

  MetaRecord to_meta() const;
  static BackboneConfig from_meta(const MetaRecord& m);
};

/// Raw sinusoidal timestep features [sin(t f_0..), cos(t f_0..)] with
/// f_i = 10000^(-i / (dim/2)).
template <class T>
nn::Matrix<T> timestep_features(std::span<const int> t, int dim);

/// Fixed 2-D sin-cos table (grid*grid x hidden); the first half of the
/// columns encodes the column index, the second half the row index.
template <class T>
nn::Matrix<T> positional_table(int hidden, int grid);

template <class T>
struct BackboneOutput {
  nn::Var<T> eps;   // standard: predicted noise
  nn::Var<T> v;     // standard: variance interpolation in [0, 1]
  nn::Var<T> x0;    // cold: predicted clean grid
};

/// Intermediate token matrices, filled on request.
template <class T>
struct BackboneTrace {
  nn::Matrix<T> embedded;  // (B*N) x hidden after patch embedding + positions
  nn::Matrix<T> trunk;     // after the last block
  nn::Matrix<T> conditioning;  // B x hidden
};

/// Diffusion transformer with adaLN-zero blocks. Latent grids are passed
/// row-per-item in (C, H, W) order.
template <class T>
class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg, std::uint64_t init_seed = 0);

  const BackboneConfig& config() const { return cfg_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }

  /// `noisy` and `sar` are B x (C*S*S); `t` and `labels` have B entries.
  /// Labels use kNullClass for "unconditioned".
  BackboneOutput<T> forward(const nn::Matrix<T>& noisy, const nn::Matrix<T>& sar, std::span<const int> t,
                            std::span<const int> labels, BackboneTrace<T>* trace = nullptr) const;

  /// Conditioning vectors (B x hidden): timestep MLP plus class embedding.
  nn::Var<T> conditioning(std::span<const int> t, std::span<const int> labels) const;

  void save(const std::filesystem::path& weights) const;
  void load(const std::filesystem::path& weights);

 private:
  struct Block {
    nn::Var<T> ada_w, ada_b;
    nn::Var<T> qkv_w, qkv_b, proj_w, proj_b;
    nn::Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
  };

  BackboneConfig cfg_;
  nn::ParameterSet<T> params_;
  nn::Matrix<T> pos_;
  nn::Var<T> patch_w_, patch_b_;
  nn::Var<T> t1_w_, t1_b_, t2_w_, t2_b_;
  nn::Var<T> class_table_;
  std::vector<Block> blocks_;
  nn::Var<T> final_ada_w_, final_ada_b_, head_w_, head_b_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace sar2rgb
