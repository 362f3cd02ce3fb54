#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sar2rgb/backbone.hpp"
#include "sar2rgb/codec.hpp"
#include "sar2rgb/downstream.hpp"
#include "sar2rgb/imagery.hpp"
#include "sar2rgb/schedule.hpp"
#include "sar2rgb/trainer.hpp"

// Glue between raw pairs, the codec and the diffusion models.
namespace sar2rgb {

/// Standardizes and encodes both modalities. Labels are copied when
/// `with_labels` is set (every pair must then carry one) and set to
/// kNullClass otherwise.
LatentDataset encode_dataset(std::span<const RawPair> pairs, const Codec& codec, bool with_labels);

/// Encoded SAR latents, one row per pair.
nn::Matrix<float> encode_sar(std::span<const RawPair> pairs, const Codec& codec);

/// Schedule recorded in a checkpoint's meta record.
NoiseSchedule checkpoint_schedule(const MetaRecord& meta);

enum class ColdSampler { kImproved, kNaive };
ColdSampler cold_sampler_from_string(const std::string& s);

struct GenerationOptions {
  double clip = 1.0;
  ColdSampler cold_sampler = ColdSampler::kImproved;
  int batch = 8;
};

/// Samples RGB for each pair (standardized, decoded through the codec).
/// Item i uses seed + i for its noise. Class-conditioned backbones read
/// pair.class_label; others run with the null class.
std::vector<Image> generate_rgb(const Backbone<float>& model, const Codec& codec, const NoiseSchedule& sched,
                                std::span<const RawPair> pairs, std::uint64_t seed,
                                const GenerationOptions& options = {});

/// Same with explicit labels (kNullClass allowed), one per pair.
std::vector<Image> generate_rgb(const Backbone<float>& model, const Codec& codec, const NoiseSchedule& sched,
                                std::span<const RawPair> pairs, std::span<const int> labels, std::uint64_t seed,
                                const GenerationOptions& options = {});

/// Generator backed by a checkpoint directory; its id is derived from the
/// checkpoint's weight bytes.
Generator checkpoint_generator(const std::filesystem::path& checkpoint, const Codec& codec,
                               const GenerationOptions& options = {});

/// FNV-1a 64-bit hash, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace sar2rgb
