#include "sar2rgb/pipeline.hpp"

#include <cstdio>
#include <memory>

#include "sar2rgb/cold.hpp"
#include "sar2rgb/diffusion.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/raster_io.hpp"

namespace sar2rgb {

using nn::Index;
using nn::Matrix;

Matrix<float> encode_sar(std::span<const RawPair> pairs, const Codec& codec) {
  std::vector<Image> sar;
  sar.reserve(pairs.size());
  for (const auto& p : pairs) sar.push_back(preprocess_sar(p.sar));
  return codec.encode_batch(sar);
}

LatentDataset encode_dataset(std::span<const RawPair> pairs, const Codec& codec, bool with_labels) {
  if (pairs.empty()) throw ConfigError("dataset is empty");
  std::vector<Image> rgb;
  LatentDataset d;
  for (const auto& p : pairs) {
    if (!p.sar.same_spatial(p.rgb)) throw DataError("pair " + p.id + ": SAR and RGB sizes differ");
    if (p.rgb.height != pairs[0].rgb.height || p.rgb.width != pairs[0].rgb.width)
      throw ConfigError("pairs differ in size; pair " + p.id + " is " + std::to_string(p.rgb.height) + "x" +
                        std::to_string(p.rgb.width));
    rgb.push_back(preprocess_rgb(p.rgb));
    if (with_labels && !p.class_label)
      throw ConfigError("class conditioning requested but pair " + p.id + " is unlabeled");
    d.labels.push_back(with_labels ? *p.class_label : kNullClass);
  }
  d.rgb = codec.encode_batch(rgb);
  d.sar = encode_sar(pairs, codec);
  d.channels = codec.latent_channels();
  d.size = codec.latent_size(pairs[0].rgb.height);
  return d;
}

NoiseSchedule checkpoint_schedule(const MetaRecord& meta) {
  try {
    return make_linear_schedule(std::stoi(meta_get(meta, "train.schedule_steps")),
                                std::stod(meta_get(meta, "train.beta_start")),
                                std::stod(meta_get(meta, "train.beta_end")));
  } catch (const std::logic_error& e) {
    throw DataError(std::string("bad schedule in checkpoint meta: ") + e.what());
  }
}

ColdSampler cold_sampler_from_string(const std::string& s) {
  if (s == "improved") return ColdSampler::kImproved;
  if (s == "naive") return ColdSampler::kNaive;
  throw ConfigError("unknown cold sampler '" + s + "' (improved, naive)");
}

std::vector<Image> generate_rgb(const Backbone<float>& model, const Codec& codec, const NoiseSchedule& sched,
                                std::span<const RawPair> pairs, std::span<const int> labels, std::uint64_t seed,
                                const GenerationOptions& options) {
  if (labels.size() != pairs.size()) throw ConfigError("one label per pair required");
  if (options.batch < 1) throw ConfigError("generation batch must be >= 1");
  const auto& cfg = model.config();
  if (codec.latent_channels() != cfg.latent_channels)
    throw ConfigError("codec latent channels do not match the checkpoint");
  std::vector<Image> out;
  out.reserve(pairs.size());
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(options.batch)) {
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(options.batch), pairs.size() - start);
    auto chunk = pairs.subspan(start, count);
    if (codec.latent_size(chunk[0].sar.height) != cfg.input_size)
      throw ConfigError("pair size " + std::to_string(chunk[0].sar.height) + " does not match the checkpoint");
    Matrix<float> sar = encode_sar(chunk, codec);
    std::vector<int> lab(labels.begin() + static_cast<std::ptrdiff_t>(start),
                         labels.begin() + static_cast<std::ptrdiff_t>(start + count));
    Matrix<float> latents;
    if (cfg.variant == Variant::kStandard) {
      std::vector<std::uint64_t> seeds(count);
      for (std::size_t i = 0; i < count; ++i) seeds[i] = seed + start + i;
      SampleOptions so;
      so.clip = options.clip;
      latents = ddpm_sample(bind_standard(model, sar, lab), static_cast<int>(count), static_cast<int>(sar.cols()),
                            sched, seeds, so)
                    .final;
    } else {
      ColdSampleOptions co;
      co.clip = options.clip;
      auto restorer = bind_cold(model, sar, lab);
      latents = options.cold_sampler == ColdSampler::kImproved ? improved_cold_sample(restorer, sar, sched, co).final
                                                               : naive_cold_sample(restorer, sar, sched, co).final;
    }
    auto images = codec.decode_batch(latents, cfg.input_size);
    for (auto& img : images) {
      for (auto& v : img.data) v = std::clamp(v, -1.0f, 1.0f);
      out.push_back(std::move(img));
    }
  }
  return out;
}

std::vector<Image> generate_rgb(const Backbone<float>& model, const Codec& codec, const NoiseSchedule& sched,
                                std::span<const RawPair> pairs, std::uint64_t seed, const GenerationOptions& options) {
  std::vector<int> labels;
  for (const auto& p : pairs) {
    if (model.config().class_count == 0) {
      labels.push_back(kNullClass);
    } else {
      if (!p.class_label) throw ConfigError("class-conditioned checkpoint needs a label for pair " + p.id);
      labels.push_back(*p.class_label);
    }
  }
  return generate_rgb(model, codec, sched, pairs, labels, seed, options);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Generator checkpoint_generator(const std::filesystem::path& checkpoint, const Codec& codec,
                               const GenerationOptions& options) {
  auto model = std::make_shared<Backbone<float>>(load_backbone(checkpoint));
  auto sched = std::make_shared<NoiseSchedule>(checkpoint_schedule(load_checkpoint_meta(checkpoint)));
  auto codec_copy = std::make_shared<Codec>(codec);
  const std::string id = to_string(model->config().variant) + ":" + fnv1a_hex(read_file(checkpoint / "weights.bin"));
  return {id, [model, sched, codec_copy, options](std::span<const RawPair> pairs, std::uint64_t seed) {
            return generate_rgb(*model, *codec_copy, *sched, pairs, seed, options);
          }};
}

}  // namespace sar2rgb
