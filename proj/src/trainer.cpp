#include "sar2rgb/trainer.hpp"

#include <fstream>
#include <sstream>

#include "sar2rgb/cold.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/raster_io.hpp"

namespace sar2rgb {

namespace fs = std::filesystem;
using nn::Matrix;

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");
  if (!(vlb_weight >= 0)) throw ConfigError("vlb_weight must be >= 0");
  make_linear_schedule(schedule_steps, beta_start, beta_end);
}

MetaRecord TrainConfig::to_meta() const {
  return {{"train.iterations", std::to_string(iterations)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.learning_rate", format_real(learning_rate)},
          {"train.weight_decay", format_real(weight_decay)},
          {"train.seed", std::to_string(seed)},
          {"train.checkpoint_interval", std::to_string(checkpoint_interval)},
          {"train.vlb_weight", format_real(vlb_weight)},
          {"train.schedule_steps", std::to_string(schedule_steps)},
          {"train.beta_start", format_real(beta_start)},
          {"train.beta_end", format_real(beta_end)}};
}

namespace {

nn::AdamWConfig optimizer_config(const TrainConfig& cfg) {
  nn::AdamWConfig oc;
  oc.lr = cfg.learning_rate;
  oc.weight_decay = cfg.weight_decay;
  return oc;
}

MetaRecord model_meta(const BackboneConfig& b) {
  MetaRecord out;
  for (const auto& [k, v] : b.to_meta()) out["model." + k] = v;
  return out;
}

BackboneConfig backbone_from(const MetaRecord& m) {
  MetaRecord inner;
  for (const auto& [k, v] : m)
    if (k.rfind("model.", 0) == 0) inner[k.substr(6)] = v;
  return BackboneConfig::from_meta(inner);
}

void check_dataset(const LatentDataset& data, const BackboneConfig& b) {
  if (data.count() == 0) throw ConfigError("training set is empty");
  if (data.channels != b.latent_channels || data.size != b.input_size)
    throw ConfigError("dataset latents (" + std::to_string(data.channels) + "x" + std::to_string(data.size) +
                      ") do not match the backbone (" + std::to_string(b.latent_channels) + "x" +
                      std::to_string(b.input_size) + ")");
  if (data.sar.rows() != data.rgb.rows() || data.sar.cols() != data.rgb.cols() ||
      static_cast<int>(data.labels.size()) != data.count())
    throw ConfigError("dataset arrays are inconsistent");
  for (int l : data.labels) {
    if (l == kNullClass) continue;
    if (b.class_count == 0) throw ConfigError("labels supplied to an unconditioned backbone");
    if (l < 0 || l >= b.class_count) throw ConfigError("label " + std::to_string(l) + " outside the class range");
  }
}

std::string loss_line(const LossRecord& r) {
  return std::to_string(r.step) + '\t' + format_real(r.terms.total) + '\t' + format_real(r.terms.mse) + '\t' +
         format_real(r.terms.vlb) + '\n';
}

constexpr const char* kLossHeader = "step\tl_final\tl_mse\tl_vlb\n";

}  // namespace

TrainState initial_state(const BackboneConfig& backbone, const TrainConfig& cfg) {
  return TrainState{Backbone<float>(backbone, Rng::derive(cfg.seed, 0)), nn::AdamW<float>(optimizer_config(cfg)),
                    Rng(Rng::derive(cfg.seed, 1)), 0};
}

LossTerms train_step(TrainState& state, const LatentDataset& data, const NoiseSchedule& sched,
                     const TrainConfig& cfg) {
  const int B = cfg.batch_size;
  DiffusionBatch<float> batch;
  batch.x0.resize(B, data.rgb.cols());
  batch.sar.resize(B, data.sar.cols());
  batch.labels.resize(static_cast<std::size_t>(B));
  for (int i = 0; i < B; ++i) {
    const int k = state.rng.uniform_int(0, data.count() - 1);
    batch.x0.row(i) = data.rgb.row(k);
    batch.sar.row(i) = data.sar.row(k);
    batch.labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(k)];
  }
  state.model.params().zero_grad();
  LossTerms terms;
  try {
    terms = state.model.config().variant == Variant::kStandard
                ? training_loss(state.model, batch, sched, state.rng, cfg.vlb_weight)
                : cold_loss(state.model, batch, sched, state.rng);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at step " + std::to_string(state.step + 1));
  }
  state.optimizer.step(state.model.params());
  ++state.step;
  return terms;
}

void save_checkpoint(const fs::path& dir, const TrainState& state, const TrainConfig& cfg, const LossTerms& last) {
  fs::create_directories(dir);
  state.model.save(dir / "weights.bin");
  std::ostringstream opt;
  state.optimizer.save(opt);
  write_file_atomic(dir / "optimizer.bin", opt.str());
  write_file_atomic(dir / "rng.txt", state.rng.serialize() + "\n");
  MetaRecord m = cfg.to_meta();
  for (auto& kv : model_meta(state.model.config())) m.insert(kv);
  m["variant"] = to_string(state.model.config().variant);
  m["seed"] = std::to_string(cfg.seed);
  m["step"] = std::to_string(state.step);
  m["loss.final"] = format_real(last.total);
  m["loss.mse"] = format_real(last.mse);
  m["loss.vlb"] = format_real(last.vlb);
  write_meta(dir / "meta.txt", m);
}

MetaRecord load_checkpoint_meta(const fs::path& dir) {
  if (!fs::exists(dir / "meta.txt")) throw DataError(dir.string() + " is not a checkpoint directory");
  return read_meta(dir / "meta.txt");
}

Backbone<float> load_backbone(const fs::path& dir) {
  MetaRecord m = load_checkpoint_meta(dir);
  Backbone<float> model(backbone_from(m));
  model.load(dir / "weights.bin");
  return model;
}

TrainState load_checkpoint(const fs::path& dir, const TrainConfig& expected_cfg,
                           const BackboneConfig& expected_backbone) {
  MetaRecord m = load_checkpoint_meta(dir);
  MetaRecord want = expected_cfg.to_meta();
  for (auto& kv : model_meta(expected_backbone)) want.insert(kv);
  for (const auto& [k, v] : want) {
    // the run length may be extended on resume
    if (k == "train.iterations" || k == "train.checkpoint_interval") continue;
    auto it = m.find(k);
    if (it == m.end() || it->second != v)
      throw ConfigError("resume config mismatch on '" + k + "': checkpoint has '" +
                        (it == m.end() ? std::string("<missing>") : it->second) + "', run has '" + v + "'");
  }
  TrainState state = initial_state(expected_backbone, expected_cfg);
  state.model.load(dir / "weights.bin");
  {
    std::ifstream in(dir / "optimizer.bin", std::ios::binary);
    if (!in) throw DataError(dir.string() + ": missing optimizer.bin");
    state.optimizer.load(in, state.model.params());
  }
  std::string rng_state = read_file(dir / "rng.txt");
  state.rng.deserialize(rng_state);
  state.step = std::stoll(meta_get(m, "step"));
  return state;
}

std::vector<LossRecord> train(const LatentDataset& data, const BackboneConfig& backbone, const TrainConfig& cfg,
                              const std::optional<fs::path>& out_dir, const std::optional<fs::path>& resume_from,
                              TrainState* final_state, const StepCallback& on_step) {
  backbone.validate();
  cfg.validate();
  check_dataset(data, backbone);
  const NoiseSchedule sched = make_linear_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);
  if (backbone.max_timestep < sched.steps()) throw ConfigError("backbone max_timestep is below the schedule length");

  TrainState state = resume_from ? load_checkpoint(*resume_from, cfg, backbone) : initial_state(backbone, cfg);
  if (state.step > cfg.iterations) throw ConfigError("checkpoint is past the requested iteration count");

  std::string log_text;
  if (out_dir) {
    fs::create_directories(*out_dir);
    // keep only records up to the resumed step
    log_text = kLossHeader;
    if (resume_from && fs::exists(*out_dir / "loss.tsv")) {
      std::istringstream old(read_file(*out_dir / "loss.tsv"));
      std::string line;
      std::getline(old, line);
      while (std::getline(old, line)) {
        if (line.empty()) continue;
        if (std::stoll(line.substr(0, line.find('\t'))) <= state.step) log_text += line + '\n';
      }
    }
    write_file_atomic(*out_dir / "loss.tsv", log_text);
  }

  std::ofstream log_stream;
  if (out_dir) log_stream.open(*out_dir / "loss.tsv", std::ios::app);

  std::vector<LossRecord> log;
  LossTerms last;
  while (state.step < cfg.iterations) {
    last = train_step(state, data, sched, cfg);
    LossRecord rec{state.step, last};
    log.push_back(rec);
    if (on_step) on_step(rec);
    if (out_dir) {
      log_stream << loss_line(rec);
      if (cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) {
        log_stream.flush();
        save_checkpoint(*out_dir / ("step_" + std::to_string(state.step)), state, cfg, last);
      }
    }
  }
  if (out_dir) {
    log_stream.close();
    save_checkpoint(*out_dir / "final", state, cfg, last);
  }
  if (final_state) *final_state = std::move(state);
  return log;
}

double window_mean(const std::vector<LossRecord>& log, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > log.size()) throw ConfigError("loss window outside the log");
  double s = 0;
  for (std::size_t i = begin; i < begin + count; ++i) s += log[i].terms.total;
  return s / static_cast<double>(count);
}

}  // namespace sar2rgb
