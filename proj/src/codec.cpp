#include "sar2rgb/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/meta.hpp"
#include "sar2rgb/nn/module.hpp"
#include "sar2rgb/nn/ops.hpp"
#include "sar2rgb/raster_io.hpp"

namespace sar2rgb {

namespace fs = std::filesystem;
using nn::Matrix;
using nn::Var;

std::string to_string(CodecMode mode) { return mode == CodecMode::kIdentity ? "identity" : "learned"; }

CodecMode codec_mode_from_string(const std::string& s) {
  if (s == "identity") return CodecMode::kIdentity;
  if (s == "learned") return CodecMode::kLearned;
  throw ConfigError("unknown codec mode '" + s + "'");
}

CodecConfig CodecConfig::identity(int image_channels) {
  CodecConfig c;
  c.mode = CodecMode::kIdentity;
  c.downsample_factor = 1;
  c.latent_channels = image_channels;
  c.image_channels = image_channels;
  c.kl_weight = 0.0;
  return c;
}

CodecConfig CodecConfig::learned(std::vector<int> hidden_widths, int latent_channels) {
  CodecConfig c;
  c.mode = CodecMode::kLearned;
  c.downsample_factor = 1 << hidden_widths.size();
  c.latent_channels = latent_channels;
  c.hidden_widths = std::move(hidden_widths);
  return c;
}

void CodecConfig::validate() const {
  if (latent_channels < 1) throw ConfigError("latent_channels must be >= 1");
  if (image_channels < 1) throw ConfigError("image_channels must be >= 1");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
  if (!(scale > 0.0)) throw ConfigError("codec scale must be > 0");
  if (mode == CodecMode::kIdentity) {
    if (downsample_factor != 1) throw ConfigError("identity codec has downsample factor 1");
    if (latent_channels != image_channels)
      throw ConfigError("identity codec latent channels must equal image channels");
    return;
  }
  if (hidden_widths.empty()) throw ConfigError("learned codec needs hidden widths");
  if (downsample_factor != (1 << hidden_widths.size()))
    throw ConfigError("downsample factor must be 2^(number of hidden widths)");
  for (int w : hidden_widths)
    if (w < 1) throw ConfigError("hidden widths must be positive");
}

// ---------------------------------------------------------------------------

struct ConvLayer {
  Var<float> w;
  Var<float> b;
  nn::ConvGeometry g;
};

/// Convolutional VAE: one stride-2 conv per stage down, nearest upsampling
/// plus conv per stage up, SiLU activations.
class ConvVae {
 public:
  ConvVae(const CodecConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    const int stages = static_cast<int>(cfg.hidden_widths.size());
    int ch = cfg.image_channels;
    int size = 0;  // geometry is bound per call; kernels do not depend on it
    auto add_conv = [&](const std::string& name, int cin, int cout, int k, int stride) {
      ConvLayer l;
      l.w = params_.add(name + ".w", nn::kaiming_uniform<float>(cout, Eigen::Index(cin) * k * k, rng));
      l.b = params_.add(name + ".b", Matrix<float>::Zero(1, cout));
      l.g = {cin, size, size, cout, k, stride, k / 2};
      return l;
    };
    enc_.push_back(add_conv("enc.in", ch, cfg.hidden_widths[0], 3, 1));
    ch = cfg.hidden_widths[0];
    for (int s = 0; s < stages; ++s) {
      const int out = cfg.hidden_widths[std::min(s + 1, stages - 1)];
      enc_.push_back(add_conv("enc.down" + std::to_string(s), ch, out, 3, 2));
      ch = out;
    }
    enc_head_ = add_conv("enc.head", ch, 2 * cfg.latent_channels, 1, 1);
    dec_in_ = add_conv("dec.in", cfg.latent_channels, ch, 3, 1);
    for (int s = stages - 1; s >= 0; --s) {
      const int out = cfg.hidden_widths[s];
      dec_.push_back(add_conv("dec.up" + std::to_string(s), ch, out, 3, 1));
      ch = out;
    }
    dec_out_ = add_conv("dec.out", ch, cfg.image_channels, 3, 1);
  }

  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  nn::AdamW<float>& optimizer() { return opt_; }

  /// Returns the (mean, logvar) halves of the encoder head.
  std::pair<Var<float>, Var<float>> encode(const Var<float>& x, int size) const {
    Var<float> h = x;
    int s = size;
    for (std::size_t i = 0; i < enc_.size(); ++i) {
      auto g = enc_[i].g;
      g.height = g.width = s;
      h = nn::silu(nn::conv2d(h, enc_[i].w, enc_[i].b, g));
      s = g.out_height();
    }
    auto g = enc_head_.g;
    g.height = g.width = s;
    Var<float> head = nn::conv2d(h, enc_head_.w, enc_head_.b, g);
    const Eigen::Index half = Eigen::Index(cfg_.latent_channels) * s * s;
    return {nn::slice_cols(head, 0, half), nn::slice_cols(head, half, half)};
  }

  Var<float> decode(const Var<float>& z, int latent_size) const {
    int s = latent_size;
    auto g = dec_in_.g;
    g.height = g.width = s;
    Var<float> h = nn::silu(nn::conv2d(z, dec_in_.w, dec_in_.b, g));
    for (const auto& layer : dec_) {
      auto lg = layer.g;
      h = nn::upsample_nearest(h, lg.in_channels, s, s, 2);
      s *= 2;
      lg.height = lg.width = s;
      h = nn::silu(nn::conv2d(h, layer.w, layer.b, lg));
    }
    auto og = dec_out_.g;
    og.height = og.width = s;
    return nn::conv2d(h, dec_out_.w, dec_out_.b, og);
  }

 private:
  CodecConfig cfg_;
  nn::ParameterSet<float> params_;
  nn::AdamW<float> opt_;
  std::vector<ConvLayer> enc_;
  ConvLayer enc_head_;
  ConvLayer dec_in_;
  std::vector<ConvLayer> dec_;
  ConvLayer dec_out_;
};

// ---------------------------------------------------------------------------

Codec::Codec(CodecConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)), init_seed_(init_seed) {
  cfg_.validate();
  if (cfg_.mode == CodecMode::kLearned) net_ = std::make_unique<ConvVae>(cfg_, init_seed_);
}

Codec::~Codec() = default;
Codec::Codec(Codec&&) noexcept = default;
Codec& Codec::operator=(Codec&&) noexcept = default;

Codec::Codec(const Codec& o) : cfg_(o.cfg_), init_seed_(o.init_seed_), steps_trained_(o.steps_trained_) {
  if (o.net_) {
    net_ = std::make_unique<ConvVae>(cfg_, init_seed_);
    net_->params().copy_from(o.net_->params());
  }
}

Codec& Codec::operator=(const Codec& o) {
  if (this != &o) {
    Codec tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

int Codec::latent_size(int image_size) const {
  if (image_size % cfg_.downsample_factor != 0)
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by the codec factor " +
                      std::to_string(cfg_.downsample_factor));
  return image_size / cfg_.downsample_factor;
}

namespace {

void check_image(const Image& img, const CodecConfig& cfg) {
  if (img.channels != cfg.image_channels) throw ConfigError("codec input channel mismatch");
  if (img.height != img.width) throw ConfigError("codec expects square images");
  if (img.height % cfg.downsample_factor != 0)
    throw ConfigError("image size " + std::to_string(img.height) +
                      " is not divisible by the codec factor " + std::to_string(cfg.downsample_factor));
}

Matrix<float> stack_rows(std::span<const Image> images) {
  if (images.empty()) return {};
  Matrix<float> m(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(images[0].size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images[0])) throw ConfigError("batch images differ in shape");
    m.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXf>(images[i].data.data(), static_cast<Eigen::Index>(images[i].size()));
  }
  return m;
}

Image row_to_image(const Matrix<float>& m, Eigen::Index row, int channels, int size) {
  Image img(channels, size, size);
  if (m.cols() != static_cast<Eigen::Index>(img.size())) throw ConfigError("latent row has the wrong width");
  Eigen::Map<Eigen::RowVectorXf>(img.data.data(), m.cols()) = m.row(row);
  return img;
}

}  // namespace

Matrix<float> Codec::encode_batch(std::span<const Image> images) const {
  for (const auto& img : images) check_image(img, cfg_);
  Matrix<float> x = stack_rows(images);
  if (is_identity() || images.empty()) return x;
  nn::NoGradGuard guard;
  auto [mean, logvar] = net_->encode(Var<float>(std::move(x)), images[0].height);
  return mean.value() * static_cast<float>(cfg_.scale);
}

std::vector<Image> Codec::decode_batch(const Matrix<float>& latents, int latent_size) const {
  const Eigen::Index expect = Eigen::Index(cfg_.latent_channels) * latent_size * latent_size;
  if (latents.cols() != expect) throw ConfigError("latent shape does not match the codec");
  std::vector<Image> out;
  const int size = latent_size * cfg_.downsample_factor;
  if (is_identity()) {
    for (Eigen::Index r = 0; r < latents.rows(); ++r) out.push_back(row_to_image(latents, r, cfg_.image_channels, size));
    return out;
  }
  nn::NoGradGuard guard;
  Matrix<float> z = latents / static_cast<float>(cfg_.scale);
  Var<float> img = net_->decode(Var<float>(std::move(z)), latent_size);
  Matrix<float> clamped = img.value().cwiseMax(-1.0f).cwiseMin(1.0f);
  for (Eigen::Index r = 0; r < clamped.rows(); ++r) out.push_back(row_to_image(clamped, r, cfg_.image_channels, size));
  return out;
}

LatentGrid Codec::encode(const Image& img) const {
  check_image(img, cfg_);
  if (is_identity()) return img;
  Matrix<float> m = encode_batch(std::span<const Image>(&img, 1));
  return row_to_image(m, 0, cfg_.latent_channels, latent_size(img.height));
}

Image Codec::decode(const LatentGrid& z) const {
  if (z.channels != cfg_.latent_channels || z.height != z.width)
    throw ConfigError("latent shape does not match the codec");
  if (is_identity()) return z;
  Matrix<float> m = stack_rows(std::span<const Image>(&z, 1));
  return decode_batch(m, z.height)[0];
}

namespace {

struct VaeForward {
  Var<float> mean, logvar, recon;
  CodecLossTerms terms;
  Matrix<float> d_recon, d_mean, d_logvar;
};

VaeForward vae_forward(const ConvVae& net, const CodecConfig& cfg, std::span<const Image> batch,
                       std::uint64_t noise_seed) {
  if (batch.empty()) throw ConfigError("empty codec batch");
  for (const auto& img : batch) check_image(img, cfg);
  const int size = batch[0].height;
  const int lsize = size / cfg.downsample_factor;
  Matrix<float> x = stack_rows(batch);
  VaeForward f;
  std::tie(f.mean, f.logvar) = net.encode(Var<float>(x), size);
  Rng rng(noise_seed);
  Matrix<float> eps(f.mean.rows(), f.mean.cols());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<float>(rng.normal());
  Var<float> z = nn::reparameterize(f.mean, f.logvar, eps);
  f.recon = net.decode(z, lsize);

  const double npix = static_cast<double>(x.size());
  const double nlat = static_cast<double>(f.mean.value().size());
  Matrix<float> diff = f.recon.value() - x;
  f.terms.reconstruction = diff.cast<double>().squaredNorm() / npix;
  const auto& mu = f.mean.value();
  const auto& lv = f.logvar.value();
  double kl = 0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double m = mu.data()[i];
    const double l = lv.data()[i];
    kl += 0.5 * (m * m + std::exp(l) - 1.0 - l);
  }
  f.terms.kl = kl / nlat;
  f.terms.total = f.terms.reconstruction + cfg.kl_weight * f.terms.kl;

  f.d_recon = diff * static_cast<float>(2.0 / npix);
  const float kw = static_cast<float>(cfg.kl_weight / nlat);
  f.d_mean = mu * kw;
  f.d_logvar = ((lv.array().exp() - 1.0f) * 0.5f * kw).matrix();
  return f;
}

}  // namespace

CodecLossTerms Codec::evaluate_loss(std::span<const Image> batch, std::uint64_t noise_seed) const {
  if (is_identity()) return {};
  nn::NoGradGuard guard;
  return vae_forward(*net_, cfg_, batch, noise_seed).terms;
}

CodecLossTerms Codec::train_step(std::span<const Image> batch, std::uint64_t noise_seed, double lr) {
  if (is_identity()) throw ConfigError("the identity codec has nothing to train");
  auto f = vae_forward(*net_, cfg_, batch, noise_seed);
  if (!std::isfinite(f.terms.total))
    throw NumericError("non-finite codec loss at step " + std::to_string(steps_trained_));
  net_->params().zero_grad();
  nn::backward<float>({{f.recon, f.d_recon}, {f.mean, f.d_mean}, {f.logvar, f.d_logvar}});
  nn::AdamWConfig oc;
  oc.lr = lr;
  if (net_->optimizer().steps() == 0) net_->optimizer() = nn::AdamW<float>(oc);
  net_->optimizer().step(net_->params());
  ++steps_trained_;
  return f.terms;
}

std::size_t Codec::parameter_count() const { return net_ ? net_->params().scalar_count() : 0; }

void Codec::save(const fs::path& dir) const {
  fs::create_directories(dir);
  MetaRecord m;
  m["mode"] = to_string(cfg_.mode);
  m["downsample_factor"] = std::to_string(cfg_.downsample_factor);
  m["latent_channels"] = std::to_string(cfg_.latent_channels);
  m["image_channels"] = std::to_string(cfg_.image_channels);
  std::string widths;
  for (std::size_t i = 0; i < cfg_.hidden_widths.size(); ++i)
    widths += (i ? "," : "") + std::to_string(cfg_.hidden_widths[i]);
  m["hidden_widths"] = widths;
  std::ostringstream d;
  d.precision(17);
  d << cfg_.scale;
  m["scale"] = d.str();
  d.str("");
  d << cfg_.kl_weight;
  m["kl_weight"] = d.str();
  m["training_seed"] = std::to_string(init_seed_);
  m["steps"] = std::to_string(steps_trained_);
  if (net_) {
    std::ostringstream blob;
    net_->params().save(blob);
    write_file_atomic(dir / "weights.bin", blob.str());
  }
  write_meta(dir / "meta.txt", m);
}

Codec Codec::load(const fs::path& dir) {
  MetaRecord m = read_meta(dir / "meta.txt");
  CodecConfig cfg;
  try {
    cfg.mode = codec_mode_from_string(meta_get(m, "mode"));
    cfg.downsample_factor = std::stoi(meta_get(m, "downsample_factor"));
    cfg.latent_channels = std::stoi(meta_get(m, "latent_channels"));
    cfg.image_channels = std::stoi(meta_get(m, "image_channels"));
    cfg.scale = std::stod(meta_get(m, "scale"));
    cfg.kl_weight = std::stod(meta_get(m, "kl_weight"));
    std::istringstream ws(meta_get(m, "hidden_widths"));
    std::string tok;
    while (std::getline(ws, tok, ','))
      if (!tok.empty()) cfg.hidden_widths.push_back(std::stoi(tok));
  } catch (const std::logic_error& e) {
    throw DataError(dir.string() + ": malformed codec metadata: " + e.what());
  }
  Codec c(cfg, std::stoull(meta_get(m, "training_seed")));
  c.steps_trained_ = std::stoll(meta_get(m, "steps"));
  if (c.net_) {
    std::ifstream in(dir / "weights.bin", std::ios::binary);
    if (!in) throw DataError(dir.string() + ": missing codec weights.bin");
    c.net_->params().load(in);
  }
  return c;
}

CodecTrainResult train_codec(std::span<const Image> images, const CodecConfig& cfg,
                             const CodecTrainConfig& train) {
  if (images.empty()) throw ConfigError("cannot train a codec on an empty dataset");
  if (cfg.mode != CodecMode::kLearned) throw ConfigError("only learned codecs are trainable");
  if (train.steps < 0 || train.batch_size < 1 || !(train.learning_rate > 0))
    throw ConfigError("invalid codec training settings");
  CodecTrainResult result{Codec(cfg, train.seed), {}};
  Rng rng(Rng::derive(train.seed, 1));
  std::vector<Image> batch(static_cast<std::size_t>(train.batch_size));
  for (int step = 0; step < train.steps; ++step) {
    for (auto& b : batch) b = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
    const std::uint64_t noise_seed = Rng::derive(train.seed, 1000003ULL + static_cast<std::uint64_t>(step));
    result.history.push_back(result.codec.train_step(batch, noise_seed, train.learning_rate));
  }
  return result;
}

}  // namespace sar2rgb
