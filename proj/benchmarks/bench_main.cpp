#include <benchmark/benchmark.h>

#include <random>

#include "semaug/augment.hpp"
#include "semaug/detector.hpp"
#include "semaug/evaluation.hpp"
#include "semaug/prompts.hpp"

using namespace semaug;

namespace {

const EncoderBundle& bundle() {
  static const EncoderBundle b = EncoderBundle::initialize(BundleConfig{}, Vocabulary::toy_default(), 1);
  return b;
}

Image scene(std::size_t size) {
  return generate_synthetic_domain(DomainSpec::preset("clear"), 1, size, toy_classes(), 3).samples[0].image;
}

void BM_FeatureExtractor(benchmark::State& state) {
  const Image img = scene(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(encode_image_features(img, bundle()));
}
BENCHMARK(BM_FeatureExtractor)->Arg(64)->Arg(128);

void BM_AttentionProjection(benchmark::State& state) {
  const FeatureMap fm = encode_image_features(scene(64), bundle());
  for (auto _ : state) benchmark::DoNotOptimize(project_features(fm, bundle()));
}
BENCHMARK(BM_AttentionProjection);

void BM_AugmentationLossAndGrad(benchmark::State& state) {
  const std::size_t M = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  std::vector<FeatureMap> crops = crop_features(scene(96), bundle(), 64, 4, rng);
  std::vector<Embedding> z;
  std::vector<std::vector<Embedding>> zstar;
  std::normal_distribution<Real> n(0, 1);
  for (const auto& f : crops) {
    z.push_back(project_features(f, bundle()));
    auto& row = zstar.emplace_back();
    for (std::size_t j = 0; j < M; ++j) {
      Embedding d(z.back().size());
      for (auto& v : d) v = n(rng);
      row.push_back(target_embedding(z.back(), embedding_shift(Embedding(d.size(), 0.0), d)));
    }
  }
  std::vector<Tensor3> A(M, Tensor3(crops[0].height(), crops[0].width(), crops[0].channels(), 0.01));
  std::vector<Tensor3> grad;
  for (auto _ : state) benchmark::DoNotOptimize(augmentation_loss(crops, z, zstar, A, bundle(), 1.0, &grad));
}
BENCHMARK(BM_AugmentationLossAndGrad)->Arg(1)->Arg(15);

void BM_RoiAlign(benchmark::State& state) {
  const FeatureMap fm = encode_image_features(scene(64), bundle());
  for (auto _ : state) benchmark::DoNotOptimize(roi_align(fm, Box{10.5, 7.25, 41, 50}, 8, 7));
}
BENCHMARK(BM_RoiAlign);

void BM_Detect(benchmark::State& state) {
  const ClassTextBank bank = build_class_bank(toy_classes(), kClassTemplate, bundle());
  const DetectionModel m = DetectionModel::create(bundle(), bank, DetectorConfig{}, 4);
  const Image img = scene(64);
  for (auto _ : state) benchmark::DoNotOptimize(detect(img, m, 0.0, 0.5));
}
BENCHMARK(BM_Detect);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<Real> u(0, 1);
  std::vector<ScoredFlag> flags(static_cast<std::size_t>(state.range(0)));
  for (auto& f : flags) f = {u(rng), u(rng) < 0.4};
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(flags, flags.size() / 2));
}
BENCHMARK(BM_AveragePrecision)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
