#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sar2rgb/downstream.hpp"
#include "sar2rgb/errors.hpp"
#include "sar2rgb/metrics.hpp"
#include "support.hpp"

using namespace sar2rgb;
using nn::Matrix;

namespace {

RawPair scene(std::uint64_t seed, int label = 0, double cloud = 0.0) {
  SyntheticSceneSpec s;
  s.seed = seed;
  s.region_count = 1;
  s.target_label = label;
  s.cloud_fraction = cloud;
  s.noise_sigma = 0.01;
  return generate_synthetic_pair(s).pair;
}

std::vector<RawPair> labeled_set(int n, int classes, std::uint64_t base) {
  std::vector<RawPair> out;
  for (int i = 0; i < n; ++i) out.push_back(scene(base + static_cast<std::uint64_t>(i), i % classes));
  return out;
}

ClassifierSpec quick_spec(int classes) {
  ClassifierSpec c;
  c.class_count = classes;
  c.epochs = 2;
  c.learning_rate = 1e-3;
  c.widths = {4, 8};
  c.batch_size = 4;
  return c;
}

bool slice_equal(const Image& a, const Image& b, int from, int count) {
  const std::size_t plane = a.plane_size();
  return std::equal(a.data.begin() + from * plane, a.data.begin() + (from + count) * plane, b.data.begin() + from * plane);
}

}  // namespace

TEST_CASE("input configurations") {
  const auto& all = input_configurations();
  const int want_channels[] = {3, 3, 3, 6, 6};
  for (int id = 1; id <= 5; ++id) {
    CHECK(all[id - 1].id == id);
    CHECK(input_configuration(id).channels == want_channels[id - 1]);
  }
  CHECK(!input_configuration(1).uses_generated());
  CHECK(input_configuration(3).uses_generated());
  CHECK(input_configuration(5).uses_generated());
  CHECK(table_column_order() == std::array<int, 5>{1, 2, 4, 3, 5});
  CHECK_THROWS_AS(input_configuration(6), ConfigError);
}

TEST_CASE("assemble_input layouts") {
  const RawPair p = scene(3, 1);
  const Image gen = testing::random_image(3, 32, 32, 9, -1.0f, 1.0f);
  for (int id = 1; id <= 5; ++id) {
    const auto& c = input_configuration(id);
    const Image in = assemble_input(c, p, c.uses_generated() ? std::optional<Image>(gen) : std::nullopt);
    CHECK(in.channels == c.channels);
    CHECK(in.height == 32);
  }
  const Image s1 = assemble_input(input_configuration(1), p);
  CHECK(slice_equal(s1, preprocess_sar(p.sar), 0, 3));
  CHECK(std::equal(s1.data.begin(), s1.data.begin() + 1024, s1.data.begin() + 2048));

  const Image four = assemble_input(input_configuration(4), p);
  const Image five = assemble_input(input_configuration(5), p, gen);
  CHECK(slice_equal(four, five, 0, 3));
  const Image rgb = preprocess_rgb(p.rgb);
  CHECK(std::equal(rgb.data.begin(), rgb.data.end(), four.data.begin() + 3 * 1024));
  CHECK(std::equal(gen.data.begin(), gen.data.end(), five.data.begin() + 3 * 1024));

  CHECK_THROWS_AS(assemble_input(input_configuration(3), p), ConfigError);
  CHECK_THROWS_AS(assemble_input(input_configuration(2), p, gen), ConfigError);
}

TEST_CASE("widened stem kernel") {
  const Matrix<float> k3 = testing::random_matrix(4, 27, 1);
  const Matrix<float> k6 = widen_stem_kernel(k3);
  REQUIRE(k6.cols() == 54);
  CHECK(k6.leftCols(27) == Matrix<float>(0.5f * k3));
  CHECK(k6.rightCols(27) == Matrix<float>(0.5f * k3));
  CHECK_THROWS(widen_stem_kernel(testing::random_matrix(4, 26, 1)));

  // identical halves of the input give the 3-channel response
  const Matrix<float> x = testing::random_matrix(1, 27, 2);
  Matrix<float> x6(1, 54);
  x6 << x, x;
  CHECK(((k6 * x6.transpose()) - (k3 * x.transpose())).cwiseAbs().maxCoeff() <= 1e-5f);

  ClassifierSpec six = quick_spec(3);
  six.input_channels = 6;
  const Classifier c6(six, 32);
  ClassifierSpec three = six;
  three.input_channels = 3;
  const Classifier c3(three, 32);
  CHECK(c6.stem().value() == widen_stem_kernel(c3.stem().value()));
}

TEST_CASE("cross entropy and its gradient") {
  Matrix<float> logits(2, 3);
  logits << 0, 0, 0, 1, 2, 3;
  const std::vector<int> labels = {1, 2};
  Matrix<float> grad;
  const double l = cross_entropy(logits, labels, &grad);
  const double ref = (std::log(3.0) + (std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0)) / 2;
  CHECK(l == doctest::Approx(ref).epsilon(1e-6));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      Matrix<float> p = logits, m = logits;
      p(r, c) += 1e-2f;
      m(r, c) -= 1e-2f;
      const double fd = (cross_entropy(p, labels, nullptr) - cross_entropy(m, labels, nullptr)) / 2e-2;
      CHECK(grad(r, c) == doctest::Approx(fd).epsilon(1e-3));
    }
}

TEST_CASE("classifier training is deterministic and rejects one-class data") {
  const auto pairs = labeled_set(12, 3, 100);
  LabeledSet train, eval;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& dst = i < 8 ? train : eval;
    dst.inputs.push_back(assemble_input(input_configuration(2), pairs[i]));
    dst.labels.push_back(*pairs[i].class_label);
  }
  const auto a = train_classifier(train, eval, quick_spec(3));
  const auto b = train_classifier(train, eval, quick_spec(3));
  REQUIRE(a.history.size() == 2);
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(a.history[e].loss == b.history[e].loss);
    CHECK(a.history[e].eval_accuracy == b.history[e].eval_accuracy);
  }

  // eval accuracy ignores the order of the eval set
  LabeledSet reversed = eval;
  std::reverse(reversed.inputs.begin(), reversed.inputs.end());
  std::reverse(reversed.labels.begin(), reversed.labels.end());
  CHECK(evaluate_accuracy(a.model, reversed) == evaluate_accuracy(a.model, eval));

  LabeledSet single = train;
  std::fill(single.labels.begin(), single.labels.end(), 1);
  CHECK_THROWS_AS(train_classifier(single, eval, quick_spec(3)), ConfigError);
}

TEST_CASE("classification experiment schema and reproducibility") {
  const auto train = labeled_set(9, 3, 200);
  const auto eval = labeled_set(6, 3, 300);
  ClassificationOptions o;
  o.classifier = quick_spec(3);
  o.classifier.epochs = 1;
  o.repeats = 2;
  o.configs = {1, 2, 3};
  const Generator gen = noisy_oracle_generator(0.2);
  const auto rep = run_classification_experiment(train, eval, &gen, o);
  REQUIRE(rep.results.size() == 3);
  CHECK(rep.results[0].config == 1);
  CHECK(rep.generator_id == gen.id);
  CHECK(rep.generation_seeds.size() == 2);
  CHECK(rep.generation_seeds[0] != rep.generation_seeds[1]);
  CHECK(rep.train_count == 9);
  CHECK(rep.eval_count == 6);
  for (int id : {1, 2}) CHECK(rep.find(id)->runs[0] == rep.find(id)->runs[1]);
  for (const auto& r : rep.results) {
    CHECK(r.runs.size() == 2);
    const double mean = (r.runs[0] + r.runs[1]) / 2;
    CHECK(r.mean == doctest::Approx(mean));
    CHECK(r.stddev == doctest::Approx(std::abs(r.runs[0] - r.runs[1]) / 2));
  }

  o.repeats = 1;
  o.configs = {2};
  const auto one = run_classification_experiment(train, eval, nullptr, o);
  CHECK(one.results[0].stddev == 0.0);
  o.configs = {5};
  CHECK_THROWS_AS(run_classification_experiment(train, eval, nullptr, o), ConfigError);
}

TEST_CASE("cloud removal evaluation") {
  std::vector<RawPair> pairs;
  for (int i = 0; i < 3; ++i) pairs.push_back(scene(400 + static_cast<std::uint64_t>(i), 0, 0.4));
  const auto exact = run_cloud_removal_eval(pairs, oracle_generator(), 0);
  CHECK(exact.n == 3);
  CHECK(exact.mae_mean == 0.0);
  CHECK(exact.ssim_mean == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::isinf(exact.psnr_mean));

  const auto cloudy = run_cloud_removal_eval(pairs, passthrough_generator(), 0);
  double m = 0, p = 0, s = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Image clean = to_unit_range(preprocess_rgb(pairs[i].rgb));
    const Image cl = to_unit_range(preprocess_rgb(*pairs[i].cloudy_rgb));
    CHECK(cloudy.items[i].mae == mae(cl, clean));
    m += mae(cl, clean);
    p += psnr(cl, clean);
    s += ssim(cl, clean);
  }
  CHECK(cloudy.mae_mean == doctest::Approx(m / 3).epsilon(1e-12));
  CHECK(cloudy.psnr_mean == doctest::Approx(p / 3).epsilon(1e-12));
  CHECK(cloudy.ssim_mean == doctest::Approx(s / 3).epsilon(1e-12));
  CHECK(cloudy.mae_mean > 0);

  const auto noisy = run_cloud_removal_eval(pairs, noisy_oracle_generator(0.1), 7);
  CHECK(run_cloud_removal_eval(pairs, noisy_oracle_generator(0.1), 7).mae_mean == noisy.mae_mean);
  CHECK(noisy.mae_mean > 0);
  CHECK(noisy.mae_mean < cloudy.mae_mean);

  CHECK_THROWS(run_cloud_removal_eval({}, oracle_generator(), 0));
  std::vector<RawPair> clear = {scene(1)};
  CHECK_THROWS_AS(run_cloud_removal_eval(clear, oracle_generator(), 0), ConfigError);
}
