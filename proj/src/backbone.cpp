#include "sar2rgb/backbone.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/nn/ops.hpp"
#include "sar2rgb/raster_io.hpp"

namespace sar2rgb {

using nn::Index;
using nn::Matrix;
using nn::Var;

std::string to_string(Variant v) { return v == Variant::kStandard ? "standard" : "cold"; }

Variant variant_from_string(const std::string& s) {
  if (s == "standard") return Variant::kStandard;
  if (s == "cold") return Variant::kCold;
  throw ConfigError("unknown variant '" + s + "'");
}

void BackboneConfig::validate() const {
  if (depth < 1 || heads < 1 || hidden < 1 || patch < 1 || latent_channels < 1 || input_size < 1)
    throw ConfigError("backbone dimensions must be positive");
  if (hidden % heads != 0) throw ConfigError("hidden width must be divisible by the head count");
  if (hidden % 4 != 0) throw ConfigError("hidden width must be divisible by 4 for the 2-D position table");
  if (input_size % patch != 0)
    throw ConfigError("latent size " + std::to_string(input_size) + " is not divisible by patch " +
                      std::to_string(patch));
  if (class_count < 0) throw ConfigError("class_count must be >= 0");
  if (max_timestep < 1) throw ConfigError("max_timestep must be >= 1");
  if (frequency_dim < 2 || frequency_dim % 2 != 0) throw ConfigError("frequency_dim must be even");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
}

BackboneConfig BackboneConfig::small_s4() { return {}; }

BackboneConfig BackboneConfig::desk() {
  BackboneConfig c;
  c.depth = 4;
  c.heads = 4;
  c.hidden = 128;
  c.patch = 4;
  c.latent_channels = 3;
  c.input_size = 32;
  return c;
}

MetaRecord BackboneConfig::to_meta() const {
  return {{"depth", std::to_string(depth)},
          {"heads", std::to_string(heads)},
          {"hidden", std::to_string(hidden)},
          {"patch", std::to_string(patch)},
          {"latent_channels", std::to_string(latent_channels)},
          {"input_size", std::to_string(input_size)},
          {"variant", to_string(variant)},
          {"class_count", std::to_string(class_count)},
          {"max_timestep", std::to_string(max_timestep)},
          {"frequency_dim", std::to_string(frequency_dim)},
          {"mlp_ratio", std::to_string(mlp_ratio)}};
}

BackboneConfig BackboneConfig::from_meta(const MetaRecord& m) {
  BackboneConfig c;
  auto geti = [&](const char* k) {
    try {
      return std::stoi(meta_get(m, k));
    } catch (const std::logic_error&) {
      throw DataError(std::string("bad backbone meta value for ") + k);
    }
  };
  c.depth = geti("depth");
  c.heads = geti("heads");
  c.hidden = geti("hidden");
  c.patch = geti("patch");
  c.latent_channels = geti("latent_channels");
  c.input_size = geti("input_size");
  c.variant = variant_from_string(meta_get(m, "variant"));
  c.class_count = geti("class_count");
  c.max_timestep = geti("max_timestep");
  c.frequency_dim = geti("frequency_dim");
  c.mlp_ratio = geti("mlp_ratio");
  c.validate();
  return c;
}

template <class T>
Matrix<T> timestep_features(std::span<const int> t, int dim) {
  const int half = dim / 2;
  Matrix<T> out(static_cast<Index>(t.size()), dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = t[b] * freq;
      out(Index(b), i) = static_cast<T>(std::sin(arg));
      out(Index(b), half + i) = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

template <class T>
Matrix<T> positional_table(int hidden, int grid) {
  const int quarter = hidden / 4;
  Matrix<T> pos(Index(grid) * grid, hidden);
  for (int gy = 0; gy < grid; ++gy) {
    for (int gx = 0; gx < grid; ++gx) {
      const Index r = Index(gy) * grid + gx;
      for (int i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
        pos(r, i) = static_cast<T>(std::sin(gx * omega));
        pos(r, quarter + i) = static_cast<T>(std::cos(gx * omega));
        pos(r, 2 * quarter + i) = static_cast<T>(std::sin(gy * omega));
        pos(r, 3 * quarter + i) = static_cast<T>(std::cos(gy * omega));
      }
    }
  }
  return pos;
}

template <class T>
Backbone<T>::Backbone(BackboneConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  const int H = cfg_.hidden;
  const int mlp = H * cfg_.mlp_ratio;
  auto zeros = [](Index r, Index c) { return Matrix<T>::Zero(r, c); };
  auto xavier = [&](Index in, Index out) { return nn::xavier_uniform<T>(in, out, rng); };

  pos_ = positional_table<T>(H, cfg_.grid());
  patch_w_ = params_.add("patch.w", xavier(cfg_.patch_dim(), H));
  patch_b_ = params_.add("patch.b", zeros(1, H));
  t1_w_ = params_.add("temb.fc1.w", nn::normal_init<T>(cfg_.frequency_dim, H, 0.02, rng));
  t1_b_ = params_.add("temb.fc1.b", zeros(1, H));
  t2_w_ = params_.add("temb.fc2.w", nn::normal_init<T>(H, H, 0.02, rng));
  t2_b_ = params_.add("temb.fc2.b", zeros(1, H));
  class_table_ = params_.add("class.table", nn::normal_init<T>(cfg_.class_count + 1, H, 0.02, rng));

  for (int d = 0; d < cfg_.depth; ++d) {
    const std::string p = "block" + std::to_string(d) + ".";
    Block b;
    b.ada_w = params_.add(p + "ada.w", zeros(H, 6 * H));
    b.ada_b = params_.add(p + "ada.b", zeros(1, 6 * H));
    b.qkv_w = params_.add(p + "qkv.w", xavier(H, 3 * H));
    b.qkv_b = params_.add(p + "qkv.b", zeros(1, 3 * H));
    b.proj_w = params_.add(p + "proj.w", xavier(H, H));
    b.proj_b = params_.add(p + "proj.b", zeros(1, H));
    b.fc1_w = params_.add(p + "fc1.w", xavier(H, mlp));
    b.fc1_b = params_.add(p + "fc1.b", zeros(1, mlp));
    b.fc2_w = params_.add(p + "fc2.w", xavier(mlp, H));
    b.fc2_b = params_.add(p + "fc2.b", zeros(1, H));
    blocks_.push_back(std::move(b));
  }
  const int out_dim = cfg_.patch * cfg_.patch * cfg_.out_channels();
  final_ada_w_ = params_.add("final.ada.w", zeros(H, 2 * H));
  final_ada_b_ = params_.add("final.ada.b", zeros(1, 2 * H));
  head_w_ = params_.add("final.head.w", zeros(H, out_dim));
  head_b_ = params_.add("final.head.b", zeros(1, out_dim));
}

template <class T>
Var<T> Backbone<T>::conditioning(std::span<const int> t, std::span<const int> labels) const {
  if (t.size() != labels.size()) throw ConfigError("timestep and label counts differ");
  std::vector<int> rows(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (t[i] < 0 || t[i] > cfg_.max_timestep)
      throw ConfigError("timestep " + std::to_string(t[i]) + " outside [0, " + std::to_string(cfg_.max_timestep) + "]");
    const int c = labels[i];
    if (c == kNullClass) {
      rows[i] = cfg_.class_count;
    } else if (c < 0 || c >= cfg_.class_count) {
      throw ConfigError("class " + std::to_string(c) + " outside [0, " + std::to_string(cfg_.class_count) + ")");
    } else {
      rows[i] = c;
    }
  }
  Var<T> feat(timestep_features<T>(t, cfg_.frequency_dim));
  Var<T> temb = nn::linear(nn::silu(nn::linear(feat, t1_w_, t1_b_)), t2_w_, t2_b_);
  return nn::add(temb, nn::gather_rows(class_table_, std::span<const int>(rows)));
}

template <class T>
BackboneOutput<T> Backbone<T>::forward(const Matrix<T>& noisy, const Matrix<T>& sar, std::span<const int> t,
                                       std::span<const int> labels, BackboneTrace<T>* trace) const {
  const int C = cfg_.latent_channels;
  const int S = cfg_.input_size;
  const Index plane = Index(C) * S * S;
  const int B = static_cast<int>(noisy.rows());
  if (noisy.cols() != plane || sar.cols() != plane || sar.rows() != noisy.rows())
    throw ConfigError("backbone input shape mismatch: expected " + std::to_string(B) + " x " +
                      std::to_string(plane) + " for both grids");
  if (static_cast<int>(t.size()) != B) throw ConfigError("one timestep per item required");
  const int H = cfg_.hidden;
  const int N = cfg_.tokens();

  Matrix<T> joined(B, 2 * plane);
  joined.leftCols(plane) = noisy;
  joined.rightCols(plane) = sar;
  Var<T> patches(nn::patchify_matrix<T>(joined, cfg_.in_channels(), S, cfg_.patch));
  Var<T> x = nn::add_tiled_rows(nn::linear(patches, patch_w_, patch_b_), pos_);
  if (trace) trace->embedded = x.value();

  Var<T> c = conditioning(t, labels);
  if (trace) trace->conditioning = c.value();
  Var<T> c_act = nn::silu(c);

  for (const auto& b : blocks_) {
    Var<T> mod = nn::linear(c_act, b.ada_w, b.ada_b);
    auto chunk = [&](int i) { return nn::slice_cols(mod, Index(i) * H, H); };
    Var<T> h = nn::modulate(nn::layer_norm(x), chunk(0), chunk(1), N);
    Var<T> a = nn::attention(nn::linear(h, b.qkv_w, b.qkv_b), B, N, cfg_.heads);
    x = nn::gated_add(x, nn::linear(a, b.proj_w, b.proj_b), chunk(2), N);
    h = nn::modulate(nn::layer_norm(x), chunk(3), chunk(4), N);
    Var<T> m = nn::linear(nn::gelu(nn::linear(h, b.fc1_w, b.fc1_b)), b.fc2_w, b.fc2_b);
    x = nn::gated_add(x, m, chunk(5), N);
  }
  if (trace) trace->trunk = x.value();

  Var<T> fmod = nn::linear(c_act, final_ada_w_, final_ada_b_);
  Var<T> h = nn::modulate(nn::layer_norm(x), nn::slice_cols(fmod, 0, H), nn::slice_cols(fmod, H, H), N);
  Var<T> out = nn::unpatchify(nn::linear(h, head_w_, head_b_), B, cfg_.out_channels(), S, cfg_.patch);

  BackboneOutput<T> result;
  if (cfg_.variant == Variant::kStandard) {
    result.eps = nn::slice_cols(out, 0, plane);
    result.v = nn::sigmoid(nn::slice_cols(out, plane, plane));
  } else {
    result.x0 = out;
  }
  return result;
}

template <class T>
void Backbone<T>::save(const std::filesystem::path& weights) const {
  std::ostringstream os;
  params_.save(os);
  write_file_atomic(weights, os.str());
}

template <class T>
void Backbone<T>::load(const std::filesystem::path& weights) {
  std::ifstream in(weights, std::ios::binary);
  if (!in) throw DataError("cannot open " + weights.string());
  params_.load(in);
}

template class Backbone<float>;
template class Backbone<double>;
template Matrix<float> timestep_features<float>(std::span<const int>, int);
template Matrix<double> timestep_features<double>(std::span<const int>, int);
template Matrix<float> positional_table<float>(int, int);
template Matrix<double> positional_table<double>(int, int);

}  // namespace sar2rgb
