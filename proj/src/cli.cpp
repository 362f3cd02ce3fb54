#include "sar2rgb/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sar2rgb/cold.hpp"
#include "sar2rgb/diffusion.hpp"
#include "sar2rgb/downstream.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/meta.hpp"
#include "sar2rgb/metrics.hpp"
#include "sar2rgb/pipeline.hpp"
#include "sar2rgb/raster_io.hpp"
#include "sar2rgb/rng.hpp"

namespace fs = std::filesystem;

namespace sar2rgb::cli {

namespace {

// Learning rate of the desk presets; the full-scale default of 1e-4 does not
// converge within 2000 iterations on 16 pairs.
constexpr double kDeskLearningRate = 3e-3;
constexpr double kDeskClassifierLearningRate = 1e-3;

Json data_keys() {
  return {{"manifest", ""}, {"label_map", ""}, {"split", "all"}, {"train_fraction", 0.8}, {"split_seed", 0}};
}

Json merge(Json a, const Json& b) {
  for (auto it = b.begin(); it != b.end(); ++it) a[it.key()] = it.value();
  return a;
}

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(key + ": '" + s + "' is not a comma-separated integer list");
    }
  }
  if (out.empty()) throw ConfigError(key + " must not be empty");
  return out;
}

std::string str(const Json& c, const char* k) { return c.at(k).get<std::string>(); }
double real(const Json& c, const char* k) { return c.at(k).get<double>(); }
std::int64_t integer(const Json& c, const char* k) { return c.at(k).get<std::int64_t>(); }
int int32(const Json& c, const char* k) {
  const auto v = integer(c, k);
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(std::string(k) + " out of range");
  return static_cast<int>(v);
}
std::uint64_t seed_of(const Json& c) { return c.at("seed").get<std::uint64_t>(); }

Json parse_flag(const std::string& key, const std::string& raw, const Json& def) {
  auto bad = [&] { return ConfigError("--" + key + ": cannot parse '" + raw + "' as " + def.type_name()); };
  try {
    std::size_t used = 0;
    switch (def.type()) {
      case Json::value_t::boolean:
        if (raw == "true" || raw == "1") return true;
        if (raw == "false" || raw == "0") return false;
        throw bad();
      case Json::value_t::number_integer:
      case Json::value_t::number_unsigned: {
        if (!raw.empty() && raw[0] == '-') {
          const long long v = std::stoll(raw, &used);
          if (used != raw.size()) throw bad();
          return v;
        }
        const unsigned long long v = std::stoull(raw, &used);
        if (used != raw.size()) throw bad();
        return v;
      }
      case Json::value_t::number_float: {
        const double v = std::stod(raw, &used);
        if (used != raw.size()) throw bad();
        return v;
      }
      default:
        return raw;
    }
  } catch (const std::logic_error&) {
    throw bad();
  }
}

// Checks a value against the default's type; integers are accepted for floats.
void check_type(const std::string& key, const Json& value, const Json& def) {
  const bool ok = (def.is_boolean() && value.is_boolean()) || (def.is_string() && value.is_string()) ||
                  (def.is_number_float() && value.is_number()) ||
                  (def.is_number_integer() && value.is_number_integer());
  if (!ok) throw ConfigError("config key '" + key + "' must be " + def.type_name());
  if (def.is_number_unsigned() && value.is_number_integer() && value.get<std::int64_t>() < 0)
    throw ConfigError("config key '" + key + "' must be non-negative");
}

// ---------------------------------------------------------------------------
// Shared loading

struct LoadedData {
  std::vector<RawPair> train, eval;
  std::string manifest_hash;
  int class_count = 0;
  bool all_labeled = false;
};

LabelMap resolve_label_map(const std::string& spec, const Manifest& m) {
  if (spec == "igbp") return LabelMap::igbp_simplified();
  if (!spec.empty()) return LabelMap::load(spec);
  int max_label = -1;
  for (const auto& e : m.entries)
    if (e.label) max_label = std::max(max_label, *e.label);
  for (const auto& e : m.entries)
    if (e.label && *e.label < 0) throw DataError("negative label in manifest row " + std::to_string(e.row));
  return LabelMap::identity(max_label + 1);
}

LoadedData load_data(const Json& c) {
  const std::string path = str(c, "manifest");
  if (path.empty()) throw ConfigError("manifest is required");
  const Manifest m = load_manifest(path, real(c, "train_fraction"), c.at("split_seed").get<std::uint64_t>());
  LoadedData d;
  d.manifest_hash = fnv1a_hex(read_file(path));
  d.all_labeled = m.all_labeled();
  bool any_label = false;
  for (const auto& e : m.entries) any_label = any_label || e.label.has_value();
  std::optional<LabelMap> map;
  if (any_label) {
    map = resolve_label_map(str(c, "label_map"), m);
    d.class_count = map->class_count();
  }
  auto load = [&](std::size_t i) {
    RawPair p = load_pair(m.entries[i]);
    if (p.class_label) p.class_label = map->map(*p.class_label);
    return p;
  };
  const std::string split = str(c, "split");
  if (split == "all") {
    for (std::size_t i = 0; i < m.entries.size(); ++i) d.train.push_back(load(i));
  } else if (split == "train" || split == "eval") {
    for (auto i : m.indices(Split::kTrain)) d.train.push_back(load(i));
    for (auto i : m.indices(Split::kEval)) d.eval.push_back(load(i));
    if (split == "eval") std::swap(d.train, d.eval);
  } else {
    throw ConfigError("split must be all, train or eval (got '" + split + "')");
  }
  return d;
}

// Both splits of a manifest, for the downstream experiments.
LoadedData load_both_splits(Json c) {
  c["split"] = "train";
  return load_data(c);
}

Codec resolve_codec(const std::string& spec) {
  if (spec == "identity") return Codec(CodecConfig::identity());
  return Codec::load(spec);
}

std::string codec_id(const Codec& codec, const std::string& spec) {
  if (codec.is_identity()) return "identity";
  return "learned:" + fnv1a_hex(read_file(fs::path(spec) / "weights.bin"));
}

Generator resolve_generator(const Json& c, const Codec* codec) {
  const std::string g = str(c, "generator");
  if (g == "oracle") return oracle_generator();
  if (g == "passthrough") return passthrough_generator();
  if (g == "noisy-oracle") return noisy_oracle_generator(real(c, "oracle_sigma"));
  if (g == "checkpoint") {
    if (str(c, "checkpoint").empty()) throw ConfigError("generator=checkpoint needs a checkpoint");
    GenerationOptions go;
    go.clip = real(c, "clip");
    go.cold_sampler = cold_sampler_from_string(str(c, "cold_sampler"));
    go.batch = int32(c, "sample_batch");
    return checkpoint_generator(str(c, "checkpoint"), *codec, go);
  }
  throw ConfigError("unknown generator '" + g + "' (checkpoint, oracle, noisy-oracle, passthrough, none)");
}

Json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

Raster<std::uint8_t> to_bytes(const Image& standardized) {
  const Image u = to_unit_range(standardized);
  Raster<std::uint8_t> out(u.channels, u.height, u.width);
  for (std::size_t i = 0; i < u.data.size(); ++i)
    out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(u.data[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

void echo_config(const fs::path& out, const std::string& command, const Json& config) {
  Json echo = config;
  echo["command"] = command;
  write_file_atomic(out / "config.json", echo.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands

Json cmd_make_synthetic(const Json& c, const fs::path& out) {
  const int count = int32(c, "count");
  if (count < 1) throw ConfigError("count must be >= 1");
  std::vector<ClassStyle> palette;
  const std::string pal = str(c, "palette");
  if (pal == "default") {
    palette = default_palette();
  } else if (pal == "sar-ambiguous") {
    // Pairs of classes share one backscatter level, so SAR alone cannot tell them apart.
    palette = default_palette();
    const float shared[] = {-12.0f, -12.0f, -6.0f, -6.0f, -18.0f, -18.0f};
    for (std::size_t i = 0; i < palette.size(); ++i) palette[i].sar_db = shared[i];
  } else {
    throw ConfigError("palette must be default or sar-ambiguous");
  }
  const int classes = int32(c, "classes");
  if (classes < 0 || classes > static_cast<int>(palette.size()))
    throw ConfigError("classes must be in [0, " + std::to_string(palette.size()) + "]");
  if (classes > 0) palette.resize(static_cast<std::size_t>(classes));

  fs::create_directories(out / "pairs");
  std::vector<ManifestEntry> entries;
  Json histogram = Json::object();
  const auto seed = seed_of(c);
  for (int i = 0; i < count; ++i) {
    SyntheticSceneSpec spec;
    spec.size = int32(c, "size");
    spec.region_count = int32(c, "region_count");
    spec.palette = palette;
    spec.noise_sigma = real(c, "noise_sigma");
    spec.seed = Rng::derive(seed, static_cast<std::uint64_t>(i));
    spec.cloud_fraction = real(c, "cloud_fraction");
    if (classes > 0) spec.target_label = i % classes;
    const SyntheticScene scene = generate_synthetic_pair(spec);
    char id[32];
    std::snprintf(id, sizeof id, "s%05d", i);
    ManifestEntry e;
    e.id = id;
    e.sar_path = out / "pairs" / (e.id + "_sar.r16");
    e.rgb_path = out / "pairs" / (e.id + "_rgb.r16");
    write_raster(e.sar_path, scene.pair.sar, RasterRole::kSar);
    write_raster(e.rgb_path, scene.pair.rgb, RasterRole::kRgb);
    if (scene.pair.cloudy_rgb) {
      e.cloudy_rgb_path = out / "pairs" / (e.id + "_cloudy.r16");
      write_raster(*e.cloudy_rgb_path, *scene.pair.cloudy_rgb, RasterRole::kRgb);
    }
    e.label = scene.pair.class_label;
    const std::string name = palette[static_cast<std::size_t>(*e.label)].name;
    histogram[name] = histogram.value(name, 0) + 1;
    entries.push_back(std::move(e));
  }
  write_manifest(out / "manifest.tsv", entries);
  return {{"metrics", {{"count", count}, {"class_histogram", histogram}}},
          {"provenance", {{"manifest_hash", fnv1a_hex(read_file(out / "manifest.tsv"))}}}};
}

Json cmd_train(const Json& c, const fs::path& out) {
  const std::string variant = str(c, "variant");
  if (variant != "standard" && variant != "standard+class" && variant != "cold")
    throw ConfigError("variant must be standard, standard+class or cold");
  const bool with_labels = variant == "standard+class";
  LoadedData data = load_data(c);
  if (data.train.empty()) throw ConfigError("the selected split is empty");
  if (with_labels && !data.all_labeled)
    throw ConfigError("variant standard+class needs a fully labeled manifest");
  const Codec codec = resolve_codec(str(c, "codec"));
  const LatentDataset latents = encode_dataset(data.train, codec, with_labels);

  BackboneConfig bb;
  bb.depth = int32(c, "depth");
  bb.heads = int32(c, "heads");
  bb.hidden = int32(c, "hidden");
  bb.patch = int32(c, "patch");
  bb.latent_channels = latents.channels;
  bb.input_size = latents.size;
  bb.variant = variant == "cold" ? Variant::kCold : Variant::kStandard;
  bb.class_count = with_labels ? data.class_count : 0;
  bb.max_timestep = int32(c, "schedule_steps");

  TrainConfig tc;
  tc.iterations = integer(c, "iterations");
  tc.batch_size = int32(c, "batch_size");
  tc.learning_rate = real(c, "learning_rate");
  tc.weight_decay = real(c, "weight_decay");
  tc.seed = seed_of(c);
  tc.checkpoint_interval = integer(c, "checkpoint_interval");
  tc.vlb_weight = real(c, "vlb_weight");
  tc.schedule_steps = int32(c, "schedule_steps");
  tc.beta_start = real(c, "beta_start");
  tc.beta_end = real(c, "beta_end");

  std::optional<fs::path> resume;
  if (!str(c, "resume").empty()) resume = fs::path(str(c, "resume"));
  const std::int64_t every = std::max<std::int64_t>(1, tc.iterations / 20);
  const auto log = train(latents, bb, tc, out, resume, nullptr, [&](const LossRecord& r) {
    if (r.step % every == 0 || r.step == tc.iterations)
      std::cerr << "step " << r.step << " loss " << r.terms.total << "\n";
  });
  const std::size_t window = std::clamp<std::size_t>(log.size() / 10, 1, 100);
  Json metrics = {{"iterations", tc.iterations}, {"steps_run", log.size()}};
  if (!log.empty()) {
    metrics["loss_first_window"] = window_mean(log, 0, window);
    metrics["loss_last_window"] = window_mean(log, log.size() - window, window);
    metrics["loss_window"] = window;
    metrics["final_loss"] = log.back().terms.total;
  }
  return {{"metrics", metrics},
          {"provenance",
           {{"manifest_hash", data.manifest_hash},
            {"codec", codec_id(codec, str(c, "codec"))},
            {"checkpoint", to_string(bb.variant) + ":" + fnv1a_hex(read_file(out / "final" / "weights.bin"))},
            {"seed", tc.seed}}}};
}

Json cmd_sample(const Json& c, const fs::path& out) {
  const std::string ckpt = str(c, "checkpoint");
  if (ckpt.empty()) throw ConfigError("checkpoint is required");
  LoadedData data = load_data(c);
  const int count = int32(c, "count");
  if (count < 1) throw ConfigError("count must be >= 1");
  if (data.train.size() < static_cast<std::size_t>(count))
    throw ConfigError("count " + std::to_string(count) + " exceeds the " + std::to_string(data.train.size()) +
                      " pairs in the selected split");
  std::vector<RawPair> pairs(data.train.begin(), data.train.begin() + count);
  const Codec codec = resolve_codec(str(c, "codec"));
  GenerationOptions go;
  go.clip = real(c, "clip");
  go.cold_sampler = cold_sampler_from_string(str(c, "cold_sampler"));
  go.batch = int32(c, "sample_batch");
  const Generator gen = checkpoint_generator(ckpt, codec, go);
  const auto seed = seed_of(c);
  const std::vector<Image> images = gen.generate(pairs, seed);

  fs::create_directories(out / "images");
  std::ostringstream tsv;
  tsv << "id\tpath\n";
  std::string all_bytes;
  double ssim_sum = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto counts = inverse_preprocess_rgb(images[i]);
    Image grid(counts.channels, counts.height, counts.width);
    std::copy(counts.data.begin(), counts.data.end(), grid.data.begin());
    const std::string rel = "images/" + pairs[i].id + ".r16";
    write_raster(out / rel, grid, RasterRole::kRgb);
    write_ppm8(out / "images" / (pairs[i].id + ".ppm"), to_bytes(images[i]));
    all_bytes += read_file(out / rel);
    tsv << pairs[i].id << '\t' << rel << '\n';
    ssim_sum += ssim(to_unit_range(images[i]), to_unit_range(preprocess_rgb(pairs[i].rgb)));
  }
  write_file_atomic(out / "generated.tsv", tsv.str());

  if (c.at("grid").get<bool>()) {
    // One row per input: SAR | generated | real.
    const int h = images[0].height, w = images[0].width;
    Raster<std::uint8_t> sheet(3, h * count, w * 3);
    for (int i = 0; i < count; ++i) {
      const auto& p = pairs[static_cast<std::size_t>(i)];
      const Raster<std::uint8_t> tiles[3] = {to_bytes(preprocess_sar(p.sar)), to_bytes(images[i]),
                                             to_bytes(preprocess_rgb(p.rgb))};
      for (int t = 0; t < 3; ++t)
        for (int ch = 0; ch < 3; ++ch)
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) sheet.at(ch, i * h + y, t * w + x) = tiles[t].at(ch, y, x);
    }
    write_ppm8(out / "grid.ppm", sheet);
  }
  return {{"metrics",
           {{"count", count}, {"ssim_mean_vs_real", ssim_sum / count}, {"images_hash", fnv1a_hex(all_bytes)}}},
          {"provenance",
           {{"manifest_hash", data.manifest_hash},
            {"checkpoint", gen.id},
            {"codec", codec_id(codec, str(c, "codec"))},
            {"seed", seed},
            {"grid_tiles", c.at("grid").get<bool>() ? 3 * count : 0}}}};
}

std::vector<std::pair<std::string, std::string>> read_generated_index(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<std::pair<std::string, std::string>> rows;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (row == 1 && line == "id\tpath") continue;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path.string() + ": row " + std::to_string(row) + ": expected id<TAB>path");
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  if (rows.empty()) throw DataError(path.string() + " lists no images");
  return rows;
}

Json cmd_eval_gen(const Json& c, const fs::path&) {
  const std::string index = str(c, "generated");
  if (index.empty()) throw ConfigError("generated is required");
  Json dc = c;
  dc["split"] = "all";
  LoadedData data = load_data(dc);
  std::map<std::string, const RawPair*> by_id;
  for (const auto& p : data.train) by_id[p.id] = &p;

  std::vector<Image> gen, ref;
  std::vector<std::string> ids;
  Json per_item = Json::object();
  double sum = 0;
  std::string gen_bytes;
  for (const auto& [id, rel] : read_generated_index(index)) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("generated id '" + id + "' is not in the reference manifest");
    const fs::path p = fs::path(index).parent_path() / rel;
    gen_bytes += read_file(p);
    gen.push_back(to_unit_range(preprocess_rgb(read_raster(p, RasterRole::kRgb))));
    ref.push_back(to_unit_range(preprocess_rgb(it->second->rgb)));
    if (!gen.back().same_shape(ref.back())) throw DataError("generated image " + id + " has the wrong shape");
    const double s = ssim(gen.back(), ref.back());
    per_item[id] = s;
    sum += s;
    ids.push_back(id);
  }
  FeatureConfig fc;
  fc.extractor = str(c, "extractor");
  fc.dim = int32(c, "feature_dim");
  fc.seed = c.at("feature_seed").get<std::uint64_t>();
  fc.resize = int32(c, "feature_resize");
  FeatureMatrix fg, fr;
  if (fc.extractor == "file") {
    if (str(c, "generated_features").empty() || str(c, "reference_features").empty())
      throw ConfigError("extractor=file needs generated_features and reference_features");
    fg = read_feature_file(str(c, "generated_features"));
    fr = read_feature_file(str(c, "reference_features"));
  } else {
    fg = extract_features(gen, fc);
    fr = extract_features(ref, fc);
  }
  const double n = static_cast<double>(ids.size());
  return {{"metrics",
           {{"SSIM", sum / n}, {"FID", fid(fg, fr)}, {"n", ids.size()}, {"extractor", extractor_id(fc)},
            {"per_item_ssim", per_item}}},
          {"provenance", {{"manifest_hash", data.manifest_hash}, {"generated_hash", fnv1a_hex(gen_bytes)}}}};
}

Json accuracy_json(const ConfigAccuracy& a) {
  return {{"mean", a.mean}, {"std", a.stddev}, {"runs", a.runs}};
}

Json cmd_eval_downstream(const Json& c, const fs::path&) {
  const std::string task = str(c, "task");
  const std::string gen_name = str(c, "generator");
  std::optional<Codec> codec;
  if (gen_name == "checkpoint") codec = resolve_codec(str(c, "codec"));
  std::optional<Generator> gen;
  if (gen_name != "none") gen = resolve_generator(c, codec ? &*codec : nullptr);
  const auto seed = seed_of(c);

  if (task == "cloud-removal") {
    if (!gen) throw ConfigError("cloud-removal needs a generator");
    LoadedData data = load_data(c);
    const auto report = run_cloud_removal_eval(data.train, *gen, seed);
    Json items = Json::array();
    for (const auto& it : report.items)
      items.push_back({{"id", it.id}, {"MAE", it.mae}, {"PSNR", number_or_inf(it.psnr)}, {"SSIM", it.ssim}});
    return {{"metrics",
             {{"MAE", report.mae_mean}, {"PSNR", number_or_inf(report.psnr_mean)}, {"SSIM", report.ssim_mean},
              {"n", report.n}, {"items", items}}},
            {"provenance", {{"manifest_hash", data.manifest_hash}, {"generator", report.generator_id}, {"seed", seed}}}};
  }
  if (task != "classification") throw ConfigError("task must be classification or cloud-removal");

  LoadedData data = load_both_splits(c);
  if (!data.all_labeled) throw ConfigError("classification needs a fully labeled manifest");
  ClassificationOptions o;
  o.configs = parse_int_list(str(c, "configs"), "configs");
  for (int id : o.configs)
    if (input_configuration(id).uses_generated() && !gen)
      throw ConfigError("config " + std::to_string(id) + " needs a generator");
  o.repeats = int32(c, "repeats");
  o.classifier.class_count = data.class_count;
  o.classifier.epochs = int32(c, "epochs");
  o.classifier.learning_rate = real(c, "learning_rate");
  o.classifier.weight_decay = real(c, "weight_decay");
  o.classifier.batch_size = int32(c, "batch_size");
  o.classifier.widths = parse_int_list(str(c, "widths"), "widths");
  o.classifier.seed = Rng::derive(seed, 1);
  o.generation_seed = Rng::derive(seed, 2);
  o.setup = gen ? gen->id : "none";
  o.shuffled_control = c.at("shuffled_control").get<bool>();
  const auto report = run_classification_experiment(data.train, data.eval, gen ? &*gen : nullptr, o);

  Json table = Json::object();
  Json columns = Json::array();
  for (int id : table_column_order()) {
    const auto* r = report.find(id);
    if (!r) continue;
    columns.push_back(input_configuration(id).name);
    table[input_configuration(id).name] = accuracy_json(*r);
  }
  Json metrics = {{"columns", columns},
                  {"accuracy", table},
                  {"repeats", report.repeats},
                  {"class_count", report.class_count},
                  {"train_count", report.train_count},
                  {"eval_count", report.eval_count},
                  {"chance", 1.0 / report.class_count}};
  if (report.shuffled_control) metrics["shuffled_control"] = accuracy_json(*report.shuffled_control);
  return {{"metrics", metrics},
          {"provenance",
           {{"manifest_hash", data.manifest_hash},
            {"generator", gen ? gen->id : "none"},
            {"classifier_seed", report.classifier_seed},
            {"generation_seeds", report.generation_seeds}}}};
}

Json cmd_train_codec(const Json& c, const fs::path& out) {
  LoadedData data = load_data(c);
  if (data.train.empty()) throw ConfigError("the selected split is empty");
  std::vector<Image> images;
  for (const auto& p : data.train) {
    images.push_back(preprocess_rgb(p.rgb));
    images.push_back(preprocess_sar(p.sar));
  }
  CodecConfig cc = CodecConfig::learned(parse_int_list(str(c, "hidden_widths"), "hidden_widths"),
                                        int32(c, "latent_channels"));
  cc.kl_weight = real(c, "kl_weight");
  cc.scale = real(c, "scale");
  CodecTrainConfig tc;
  tc.steps = int32(c, "steps");
  tc.batch_size = int32(c, "batch_size");
  tc.learning_rate = real(c, "learning_rate");
  tc.seed = seed_of(c);
  auto result = train_codec(images, cc, tc);
  result.codec.save(out / "codec");
  Json metrics = {{"steps", tc.steps}, {"parameter_count", result.codec.parameter_count()}};
  if (!result.history.empty()) {
    metrics["final_reconstruction"] = result.history.back().reconstruction;
    metrics["final_kl"] = result.history.back().kl;
  }
  return {{"metrics", metrics},
          {"provenance",
           {{"manifest_hash", data.manifest_hash},
            {"codec", "learned:" + fnv1a_hex(read_file(out / "codec" / "weights.bin"))},
            {"seed", tc.seed}}}};
}

std::string fmt(const Json& v) {
  if (v.is_number_float()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v.get<double>());
    return buf;
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"make-synthetic", "train",           "sample",
                                                 "eval-gen",       "eval-downstream", "train-codec"};
  return names;
}

Json command_defaults(const std::string& command) {
  Json base = {{"seed", std::uint64_t{0}}};
  if (command == "make-synthetic")
    return merge(base, {{"count", 16},
                        {"size", 32},
                        {"region_count", 3},
                        {"noise_sigma", 0.01},
                        {"palette", "default"},
                        {"classes", 0},
                        {"cloud_fraction", 0.0}});
  if (command == "train")
    return merge(merge(base, data_keys()), {{"variant", "standard"},
                                            {"codec", "identity"},
                                            {"iterations", 250000},
                                            {"batch_size", 192},
                                            {"learning_rate", 1e-4},
                                            {"weight_decay", 0.0},
                                            {"checkpoint_interval", 0},
                                            {"vlb_weight", 1.0},
                                            {"schedule_steps", 1000},
                                            {"beta_start", 1e-4},
                                            {"beta_end", 0.02},
                                            {"depth", 12},
                                            {"heads", 6},
                                            {"hidden", 384},
                                            {"patch", 4},
                                            {"resume", ""}});
  if (command == "sample")
    return merge(merge(base, data_keys()), {{"checkpoint", ""},
                                            {"codec", "identity"},
                                            {"count", 200},
                                            {"clip", 1.0},
                                            {"cold_sampler", "improved"},
                                            {"sample_batch", 8},
                                            {"grid", true}});
  if (command == "eval-gen")
    return merge(merge(base, data_keys()), {{"generated", ""},
                                            {"extractor", "random-projection"},
                                            {"feature_dim", 64},
                                            {"feature_seed", 0},
                                            {"feature_resize", 32},
                                            {"generated_features", ""},
                                            {"reference_features", ""}});
  if (command == "eval-downstream")
    return merge(merge(base, data_keys()), {{"task", "classification"},
                                            {"generator", "checkpoint"},
                                            {"checkpoint", ""},
                                            {"codec", "identity"},
                                            {"clip", 1.0},
                                            {"cold_sampler", "improved"},
                                            {"sample_batch", 8},
                                            {"oracle_sigma", 0.1},
                                            {"configs", "1,2,3,4,5"},
                                            {"repeats", 3},
                                            {"epochs", 20},
                                            {"learning_rate", 5e-5},
                                            {"weight_decay", 1e-4},
                                            {"batch_size", 10},
                                            {"widths", "16,32,64"},
                                            {"shuffled_control", false}});
  if (command == "train-codec")
    return merge(merge(base, data_keys()), {{"hidden_widths", "32,64,64"},
                                            {"latent_channels", 4},
                                            {"kl_weight", 1e-6},
                                            {"scale", 1.0},
                                            {"steps", 2000},
                                            {"batch_size", 8},
                                            {"learning_rate", 1e-3}});
  throw ConfigError("unknown command '" + command + "'");
}

Json preset(const std::string& command, const std::string& name) {
  command_defaults(command);  // validates the command
  if (name != "desk") throw ConfigError("unknown preset '" + name + "' (desk)");
  if (command == "make-synthetic") return {{"count", 16}, {"size", 32}};
  if (command == "train")
    return {{"codec", "identity"}, {"depth", 4},       {"hidden", 128},
            {"heads", 4},          {"patch", 4},       {"schedule_steps", 1000},
            {"batch_size", 16},    {"iterations", 2000}, {"learning_rate", kDeskLearningRate},
            {"split", "all"}};
  if (command == "sample") return {{"codec", "identity"}, {"count", 8}, {"split", "all"}};
  if (command == "eval-downstream")
    return {{"codec", "identity"}, {"learning_rate", kDeskClassifierLearningRate}, {"split", "train"}};
  if (command == "train-codec") return {{"steps", 500}, {"hidden_widths", "16,32,32"}};
  return Json::object();
}

Json resolve_config(const std::string& command, const std::optional<std::string>& preset_name,
                    const std::optional<Json>& file, const std::map<std::string, std::string>& flags) {
  const Json defaults = command_defaults(command);
  Json cfg = defaults;
  std::optional<std::string> pname = preset_name;
  if (file) {
    if (!file->is_object()) throw ConfigError("config file must hold a JSON object");
    if (file->contains("command") && file->at("command") != command)
      throw ConfigError("config file is for command '" + file->at("command").dump() + "'");
    if (!pname && file->contains("preset")) {
      if (!file->at("preset").is_string()) throw ConfigError("preset must be a string");
      pname = file->at("preset").get<std::string>();
    }
  }
  if (pname && !pname->empty()) cfg = merge(cfg, preset(command, *pname));
  if (file) {
    for (auto it = file->begin(); it != file->end(); ++it) {
      if (it.key() == "command" || it.key() == "preset") continue;
      if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
      check_type(it.key(), it.value(), defaults.at(it.key()));
      cfg[it.key()] = it.value();
    }
  }
  for (const auto& [key, raw] : flags) {
    if (!defaults.contains(key)) throw ConfigError("unknown option --" + key);
    cfg[key] = parse_flag(key, raw, defaults.at(key));
  }
  cfg["preset"] = pname.value_or("");
  return cfg;
}

std::string config_hash(const Json& config) { return fnv1a_hex(config.dump()); }

Json run_command(const std::string& command, const Json& config, const fs::path& out) {
  fs::create_directories(out);
  echo_config(out, command, config);
  Json body;
  if (command == "make-synthetic") body = cmd_make_synthetic(config, out);
  else if (command == "train") body = cmd_train(config, out);
  else if (command == "sample") body = cmd_sample(config, out);
  else if (command == "eval-gen") body = cmd_eval_gen(config, out);
  else if (command == "eval-downstream") body = cmd_eval_downstream(config, out);
  else if (command == "train-codec") body = cmd_train_codec(config, out);
  else throw ConfigError("unknown command '" + command + "'");
  Json report = {{"schema_version", kReportSchemaVersion},
                 {"command", command},
                 {"config_hash", config_hash(config)},
                 {"metrics", body.at("metrics")},
                 {"provenance", body.at("provenance")}};
  write_file_atomic(out / "report.json", report.dump(2) + "\n");
  write_file_atomic(out / "report.txt", render_report(report));
  return report;
}

std::string render_report(const Json& report) {
  std::ostringstream os;
  const std::string command = report.at("command").get<std::string>();
  const Json& m = report.at("metrics");
  os << command << "  (config " << report.at("config_hash").get<std::string>() << ")\n\n";
  if (command == "eval-downstream" && m.contains("accuracy")) {
    const Json& cols = m.at("columns");
    std::vector<std::string> cells;
    for (const auto& col : cols) {
      const Json& a = m.at("accuracy").at(col.get<std::string>());
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f +/- %.3f", a.at("mean").get<double>(), a.at("std").get<double>());
      cells.emplace_back(buf);
    }
    std::size_t width = 0;
    for (std::size_t i = 0; i < cells.size(); ++i)
      width = std::max({width, cells[i].size(), cols[i].get<std::string>().size()});
    for (const auto& col : cols) {
      const std::string name = col.get<std::string>();
      os << name << std::string(width + 2 - name.size(), ' ');
    }
    os << '\n';
    for (const auto& cell : cells) os << cell << std::string(width + 2 - cell.size(), ' ');
    os << "\n\n";
    if (m.contains("shuffled_control")) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "shuffled-label control (S2): %.3f +/- %.3f, chance %.3f\n",
                    m.at("shuffled_control").at("mean").get<double>(),
                    m.at("shuffled_control").at("std").get<double>(), m.at("chance").get<double>());
      os << buf;
    }
    os << "repeats " << m.at("repeats") << ", train " << m.at("train_count") << ", eval " << m.at("eval_count")
       << '\n';
  } else {
    std::size_t width = 0;
    for (auto it = m.begin(); it != m.end(); ++it)
      if (!it->is_structured()) width = std::max(width, it.key().size());
    for (auto it = m.begin(); it != m.end(); ++it)
      if (!it->is_structured()) os << it.key() << std::string(width + 2 - it.key().size(), ' ') << fmt(*it) << '\n';
  }
  os << '\n';
  const Json& p = report.at("provenance");
  for (auto it = p.begin(); it != p.end(); ++it) os << it.key() << ": " << fmt(*it) << '\n';
  return os.str();
}

int main(int argc, char** argv) {
  CLI::App app{"SAR-to-RGB diffusion toolkit"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::string out, config_path, preset_name;
  std::string seed_raw;
  app.add_option("--out", out, "output directory");
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--preset", preset_name, "named preset (desk)");
  auto* seed_opt = app.add_option("--seed", seed_raw, "global seed");

  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->fallthrough();
    const Json defaults = command_defaults(name);
    for (auto it = defaults.begin(); it != defaults.end(); ++it) {
      if (it.key() == "seed") continue;
      std::string dashed = it.key();
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      std::string opt = "--" + dashed;
      if (dashed != it.key()) opt += ",--" + it.key();
      const std::string key = it.key();
      sub->add_option_function<std::string>(
          opt, [&flag_values, name, key](const std::string& v) { flag_values[name][key] = v; },
          "default " + it.value().dump());
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    std::optional<Json> file;
    if (!config_path.empty()) {
      try {
        file = Json::parse(read_file(config_path));
      } catch (const Json::parse_error& e) {
        throw ConfigError("cannot parse " + config_path + ": " + e.what());
      }
      if (out.empty() && file->contains("out")) out = file->at("out").get<std::string>();
      if (file->contains("out")) file->erase("out");
    }
    auto flags = flag_values[command];
    if (seed_opt->count() > 0) flags["seed"] = seed_raw;
    const Json cfg = resolve_config(command, preset_name.empty() ? std::nullopt : std::optional(preset_name), file,
                                    flags);
    if (out.empty()) throw ConfigError("--out is required");
    const Json report = run_command(command, cfg, out);
    std::cout << render_report(report);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace sar2rgb::cli
