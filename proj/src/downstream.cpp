#include "sar2rgb/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sar2rgb/errors.hpp"
#include "sar2rgb/meta.hpp"
#include "sar2rgb/metrics.hpp"
#include "sar2rgb/nn/ops.hpp"
#include "sar2rgb/rng.hpp"

namespace sar2rgb {

using nn::Index;
using nn::Matrix;
using nn::Var;

bool InputConfiguration::uses_generated() const {
  return std::find(sources.begin(), sources.end(), InputSource::kGeneratedRgb) != sources.end();
}

const std::array<InputConfiguration, 5>& input_configurations() {
  static const std::array<InputConfiguration, 5> table = {{
      {1, "S1", 3, {InputSource::kOriginalSar}},
      {2, "S2", 3, {InputSource::kOriginalRgb}},
      {3, "GenS2", 3, {InputSource::kGeneratedRgb}},
      {4, "S1&S2", 6, {InputSource::kOriginalSar, InputSource::kOriginalRgb}},
      {5, "S1&GenS2", 6, {InputSource::kOriginalSar, InputSource::kGeneratedRgb}},
  }};
  return table;
}

const InputConfiguration& input_configuration(int id) {
  if (id < 1 || id > 5) throw ConfigError("input configuration " + std::to_string(id) + " does not exist (1-5)");
  return input_configurations()[static_cast<std::size_t>(id - 1)];
}

std::array<int, 5> table_column_order() { return {1, 2, 4, 3, 5}; }

Image assemble_input(const InputConfiguration& config, const RawPair& pair, const std::optional<Image>& generated) {
  if (config.uses_generated() != generated.has_value())
    throw ConfigError(std::string("configuration ") + config.name +
                      (generated ? " does not take a generated image" : " needs a generated image") + " (pair " +
                      pair.id + ")");
  std::vector<Image> parts;
  for (InputSource s : config.sources) {
    switch (s) {
      case InputSource::kOriginalSar:
        parts.push_back(preprocess_sar(pair.sar));
        break;
      case InputSource::kOriginalRgb:
        parts.push_back(preprocess_rgb(pair.rgb));
        break;
      case InputSource::kGeneratedRgb:
        if (generated->channels != 3) throw ConfigError("generated image must have 3 channels");
        parts.push_back(*generated);
        break;
    }
  }
  Image out(config.channels, parts[0].height, parts[0].width);
  std::size_t off = 0;
  for (const auto& p : parts) {
    if (!p.same_spatial(parts[0])) throw ConfigError("modalities of pair " + pair.id + " differ in size");
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

Matrix<float> widen_stem_kernel(const Matrix<float>& k3) {
  if (k3.cols() % 3 != 0) throw ConfigError("stem kernel width is not a multiple of 3 channels");
  Matrix<float> k6(k3.rows(), 2 * k3.cols());
  k6.leftCols(k3.cols()) = k3 * 0.5f;
  k6.rightCols(k3.cols()) = k3 * 0.5f;
  return k6;
}

Classifier::Classifier(const ClassifierSpec& spec, int image_size) : spec_(spec), image_size_(image_size) {
  if (spec.input_channels != 3 && spec.input_channels != 6)
    throw ConfigError("classifier input must have 3 or 6 channels");
  if (spec.class_count < 2) throw ConfigError("classifier needs at least two classes");
  if (spec.widths.empty()) throw ConfigError("classifier needs at least one width");
  Rng rng(spec.seed);
  const int w0 = spec.widths[0];
  Matrix<float> stem3 = nn::kaiming_uniform<float>(w0, 3 * 9, rng);
  stem_w_ = params_.add("stem.w", spec.input_channels == 6 ? widen_stem_kernel(stem3) : stem3);
  stem_b_ = params_.add("stem.b", Matrix<float>::Zero(1, w0));
  int cin = w0;
  auto make_conv = [&](const std::string& name, int in, int out, int k, int stride) {
    Conv c;
    c.w = params_.add(name + ".w", nn::kaiming_uniform<float>(out, Index(in) * k * k, rng));
    c.b = params_.add(name + ".b", Matrix<float>::Zero(1, out));
    c.cin = in;
    c.cout = out;
    c.kernel = k;
    c.stride = stride;
    return c;
  };
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    const int w = spec.widths[i];
    const int stride = i == 0 ? 1 : 2;
    const std::string p = "block" + std::to_string(i);
    Block b;
    b.a = make_conv(p + ".a", cin, w, 3, stride);
    b.b = make_conv(p + ".b", w, w, 3, 1);
    if (stride != 1 || cin != w) b.skip = make_conv(p + ".skip", cin, w, 1, stride);
    blocks_.push_back(std::move(b));
    cin = w;
  }
  head_w_ = params_.add("head.w", nn::xavier_uniform<float>(cin, spec.class_count, rng));
  head_b_ = params_.add("head.b", Matrix<float>::Zero(1, spec.class_count));
}

Var<float> Classifier::conv(const Conv& c, const Var<float>& x, int& size) const {
  nn::ConvGeometry g{c.cin, size, size, c.cout, c.kernel, c.stride, c.kernel / 2};
  size = g.out_height();
  return nn::conv2d(x, c.w, c.b, g);
}

Var<float> Classifier::forward(const Matrix<float>& images) const {
  if (images.cols() != Index(spec_.input_channels) * image_size_ * image_size_)
    throw ConfigError("classifier input shape mismatch");
  int size = image_size_;
  nn::ConvGeometry g{spec_.input_channels, size, size, spec_.widths[0], 3, 1, 1};
  Var<float> x = nn::relu(nn::conv2d(Var<float>(images), stem_w_, stem_b_, g));
  for (const auto& b : blocks_) {
    int s = size;
    Var<float> h = nn::relu(conv(b.a, x, s));
    h = conv(b.b, h, s);
    int s_skip = size;
    Var<float> skip = b.skip ? conv(*b.skip, x, s_skip) : x;
    x = nn::relu(nn::add(h, skip));
    size = s;
  }
  Var<float> pooled = nn::global_avg_pool(x, blocks_.back().b.cout, size, size);
  return nn::linear(pooled, head_w_, head_b_);
}

namespace {

Matrix<float> stack(std::span<const Image> images, std::span<const std::size_t> idx) {
  Matrix<float> m(static_cast<Index>(idx.size()), static_cast<Index>(images[idx[0]].size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Image& img = images[idx[i]];
    if (static_cast<Index>(img.size()) != m.cols()) throw ConfigError("classifier inputs differ in shape");
    m.row(static_cast<Index>(i)) = Eigen::Map<const Eigen::RowVectorXf>(img.data.data(), m.cols());
  }
  return m;
}

std::vector<int> argmax_rows(const Matrix<float>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Index r = 0; r < logits.rows(); ++r) {
    Index best;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace

std::vector<int> Classifier::predict(std::span<const Image> images) const {
  nn::NoGradGuard guard;
  std::vector<int> out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, images.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto p = argmax_rows(forward(stack(images, idx)).value());
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

double cross_entropy(const Matrix<float>& logits, std::span<const int> labels, Matrix<float>* grad) {
  if (static_cast<Index>(labels.size()) != logits.rows()) throw ConfigError("one label per logit row required");
  const double n = static_cast<double>(logits.rows());
  double loss = 0;
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols()) throw ConfigError("label " + std::to_string(y) + " outside the class range");
    const double m = logits.row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(r).cast<double>().array() - m).exp();
    const double z = e.sum();
    loss += std::log(z) + m - logits(r, y);
    if (grad) {
      Eigen::RowVectorXd p = e / z;
      p(y) -= 1.0;
      grad->row(r) = (p / n).cast<float>();
    }
  }
  return loss / n;
}

double evaluate_accuracy(const Classifier& model, const LabeledSet& set) {
  return accuracy(model.predict(set.inputs), set.labels);
}

TrainedClassifier train_classifier(const LabeledSet& train, const LabeledSet& eval, const ClassifierSpec& spec) {
  if (train.inputs.empty()) throw ConfigError("classifier training set is empty");
  if (train.inputs.size() != train.labels.size() || eval.inputs.size() != eval.labels.size())
    throw ConfigError("inputs and labels differ in length");
  std::vector<int> distinct = train.labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw ConfigError("classifier training set contains a single class");
  if (spec.epochs < 1 || spec.batch_size < 1 || !(spec.learning_rate > 0))
    throw ConfigError("invalid classifier training settings");
  const Image& first = train.inputs[0];
  if (first.channels != spec.input_channels || first.height != first.width)
    throw ConfigError("classifier inputs must be square with " + std::to_string(spec.input_channels) + " channels");

  TrainedClassifier out{Classifier(spec, first.height), {}};
  nn::AdamWConfig oc;
  oc.lr = spec.learning_rate;
  oc.weight_decay = spec.weight_decay;
  nn::AdamW<float> opt(oc);
  Rng rng(Rng::derive(spec.seed, 7));
  std::vector<std::size_t> order(train.inputs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(spec.batch_size), order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, count);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = train.labels[idx[i]];
      out.model.params().zero_grad();
      Var<float> logits = out.model.forward(stack(train.inputs, idx));
      Matrix<float> g;
      const double loss = cross_entropy(logits.value(), labels, &g);
      if (!std::isfinite(loss)) throw NumericError("non-finite classifier loss in epoch " + std::to_string(epoch));
      nn::backward<float>(logits, g);
      opt.step(out.model.params());
      loss_sum += loss;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(batches);
    log.train_accuracy = evaluate_accuracy(out.model, train);
    log.eval_accuracy = eval.inputs.empty() ? 0.0 : evaluate_accuracy(out.model, eval);
    out.history.push_back(log);
  }
  return out;
}

// ---------------------------------------------------------------------------

const ConfigAccuracy* ClassificationReport::find(int config) const {
  for (const auto& r : results)
    if (r.config == config) return &r;
  return nullptr;
}

namespace {

void summarize(ConfigAccuracy& acc) {
  const double n = static_cast<double>(acc.runs.size());
  acc.mean = std::accumulate(acc.runs.begin(), acc.runs.end(), 0.0) / n;
  double ss = 0;
  for (double v : acc.runs) ss += (v - acc.mean) * (v - acc.mean);
  acc.stddev = std::sqrt(ss / n);
}

std::vector<int> labels_of(const std::vector<RawPair>& pairs) {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!p.class_label) throw ConfigError("pair " + p.id + " has no class label");
    out.push_back(*p.class_label);
  }
  return out;
}

LabeledSet build_set(const InputConfiguration& cfg, const std::vector<RawPair>& pairs,
                     const std::vector<Image>* generated) {
  LabeledSet set;
  set.labels = labels_of(pairs);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    set.inputs.push_back(assemble_input(cfg, pairs[i], generated ? std::optional<Image>((*generated)[i]) : std::nullopt));
  return set;
}

}  // namespace

ClassificationReport run_classification_experiment(const std::vector<RawPair>& train, const std::vector<RawPair>& eval,
                                                   const Generator* generator, const ClassificationOptions& options) {
  if (options.repeats < 1) throw ConfigError("repeats must be >= 1");
  if (train.empty() || eval.empty()) throw ConfigError("classification needs non-empty train and eval splits");
  std::vector<int> configs = options.configs;
  std::sort(configs.begin(), configs.end());
  configs.erase(std::unique(configs.begin(), configs.end()), configs.end());
  bool needs_generator = false;
  for (int c : configs) needs_generator = needs_generator || input_configuration(c).uses_generated();
  if (needs_generator && !generator)
    throw ConfigError("configurations 3 and 5 need a generator checkpoint");

  ClassificationReport report;
  report.setup = options.setup;
  if (generator && needs_generator) report.generator_id = generator->id;
  report.repeats = options.repeats;
  report.class_count = options.classifier.class_count;
  report.train_count = train.size();
  report.eval_count = eval.size();
  report.classifier_seed = options.classifier.seed;
  for (int c : configs) report.results.push_back({c, {}, 0, 0});
  if (options.shuffled_control) report.shuffled_control = ConfigAccuracy{2, {}, 0, 0};

  for (int r = 0; r < options.repeats; ++r) {
    const std::uint64_t gen_seed = Rng::derive(options.generation_seed, static_cast<std::uint64_t>(r));
    report.generation_seeds.push_back(gen_seed);
    std::vector<Image> gen_train, gen_eval;
    if (needs_generator) {
      gen_train = generator->generate(train, gen_seed);
      // eval items continue the per-item seed sequence after the train items
      gen_eval = generator->generate(eval, gen_seed + train.size());
      if (gen_train.size() != train.size() || gen_eval.size() != eval.size())
        throw ConfigError("generator returned the wrong number of images");
    }
    for (auto& acc : report.results) {
      const auto& cfg = input_configuration(acc.config);
      const bool gen = cfg.uses_generated();
      LabeledSet tr = build_set(cfg, train, gen ? &gen_train : nullptr);
      LabeledSet ev = build_set(cfg, eval, gen ? &gen_eval : nullptr);
      ClassifierSpec spec = options.classifier;
      spec.input_channels = cfg.channels;
      auto trained = train_classifier(tr, ev, spec);
      acc.runs.push_back(trained.history.back().eval_accuracy);
    }
    if (report.shuffled_control) {
      const auto& cfg = input_configuration(2);
      LabeledSet tr = build_set(cfg, train, nullptr);
      LabeledSet ev = build_set(cfg, eval, nullptr);
      Rng shuffle_rng(Rng::derive(options.classifier.seed, 1000 + static_cast<std::uint64_t>(r)));
      std::shuffle(tr.labels.begin(), tr.labels.end(), shuffle_rng.engine());
      ClassifierSpec spec = options.classifier;
      spec.input_channels = cfg.channels;
      report.shuffled_control->runs.push_back(train_classifier(tr, ev, spec).history.back().eval_accuracy);
    }
  }
  for (auto& acc : report.results) summarize(acc);
  if (report.shuffled_control) summarize(*report.shuffled_control);
  return report;
}

CloudRemovalReport run_cloud_removal_eval(const std::vector<RawPair>& pairs, const Generator& generator,
                                          std::uint64_t seed) {
  if (pairs.empty()) throw ConfigError("cloud-removal evaluation needs at least one pair");
  for (const auto& p : pairs)
    if (!p.cloudy_rgb) throw ConfigError("pair " + p.id + " has no cloudy image");
  std::vector<Image> generated = generator.generate(pairs, seed);
  if (generated.size() != pairs.size()) throw ConfigError("generator returned the wrong number of images");
  CloudRemovalReport report;
  report.generator_id = generator.id;
  report.seed = seed;
  report.n = pairs.size();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Image clean = to_unit_range(preprocess_rgb(pairs[i].rgb));
    Image gen = to_unit_range(generated[i]);
    CloudItemMetrics m{pairs[i].id, mae(gen, clean), psnr(gen, clean), ssim(gen, clean)};
    report.mae_mean += m.mae;
    report.psnr_mean += m.psnr;
    report.ssim_mean += m.ssim;
    report.items.push_back(m);
  }
  const double n = static_cast<double>(pairs.size());
  report.mae_mean /= n;
  report.psnr_mean /= n;
  report.ssim_mean /= n;
  return report;
}

Generator oracle_generator() {
  return {"oracle", [](std::span<const RawPair> pairs, std::uint64_t) {
            std::vector<Image> out;
            for (const auto& p : pairs) out.push_back(preprocess_rgb(p.rgb));
            return out;
          }};
}

Generator passthrough_generator() {
  return {"passthrough-cloudy", [](std::span<const RawPair> pairs, std::uint64_t) {
            std::vector<Image> out;
            for (const auto& p : pairs) {
              if (!p.cloudy_rgb) throw ConfigError("pair " + p.id + " has no cloudy image");
              out.push_back(preprocess_rgb(*p.cloudy_rgb));
            }
            return out;
          }};
}

Generator noisy_oracle_generator(double sigma) {
  if (!(sigma >= 0)) throw ConfigError("noisy oracle sigma must be >= 0");
  return {"noisy-oracle/s" + format_real(sigma), [sigma](std::span<const RawPair> pairs, std::uint64_t seed) {
            std::vector<Image> out;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
              Rng rng(seed + i);
              Image img = preprocess_rgb(pairs[i].rgb);
              for (auto& v : img.data) v = std::clamp(static_cast<float>(v + sigma * rng.normal()), -1.0f, 1.0f);
              out.push_back(std::move(img));
            }
            return out;
          }};
}

}  // namespace sar2rgb
