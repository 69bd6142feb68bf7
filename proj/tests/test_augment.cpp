#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "semaug/archive.hpp"
#include "semaug/augment.hpp"
#include "semaug/errors.hpp"
#include "semaug/prompts.hpp"
#include "semaug/vecmath.hpp"
#include "test_util.hpp"
#include "toy_bundle.hpp"

using namespace semaug;

namespace {

Tensor3 filled(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed, Real scale = 1) {
  Rng rng(seed);
  std::normal_distribution<Real> n(0, scale);
  Tensor3 t(h, w, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

PromptSet two_prompts() {
  return generate_prompts(make_wordlist({"fog"}, "t"), make_wordlist({"day", "night"}, "t"), kTargetTemplate,
                          kSourcePrompt);
}

std::vector<Image> source_images(std::size_t n) {
  std::vector<Image> out;
  for (auto& s : generate_synthetic_domain(DomainSpec::preset("clear"), n, 64, toy_classes(), 31).samples)
    out.push_back(std::move(s.image));
  return out;
}

}  // namespace

TEST(Shift, UnitDirectionAndDegenerateCase) {
  const Embedding qs{1, 2, 3}, qt{2, 2, 5};
  const Embedding s = embedding_shift(qs, qt);
  const Real n = std::sqrt(1.0 + 0.0 + 4.0);
  EXPECT_NEAR(s[0], 1 / n, 1e-15);
  EXPECT_NEAR(s[1], 0, 1e-15);
  EXPECT_NEAR(s[2], 2 / n, 1e-15);
  EXPECT_THROW(embedding_shift(qs, qs), DegenerateShift);
  EXPECT_THROW(embedding_shift(qs, Embedding{1, 2}), InvalidInput);
  EXPECT_EQ(target_embedding(Embedding{1, 1, 1}, s), (Embedding{1 + 1 / n, 1, 1 + 2 / n}));
}

TEST(Shift, PretrainedTargetsMatchVectorArithmetic) {
  const EncoderBundle& b = test::small_pretrained_bundle();
  const Embedding qs = encode_text(kSourcePrompt, b);
  const Embedding qt = encode_text("an image taken on a snow night", b);
  const Embedding z = encode_image(source_images(1)[0], b);
  const Embedding zstar = target_embedding(z, embedding_shift(qs, qt));
  Real norm = 0;
  for (std::size_t d = 0; d < qs.size(); ++d) norm += (qt[d] - qs[d]) * (qt[d] - qs[d]);
  norm = std::sqrt(norm);
  for (std::size_t d = 0; d < z.size(); ++d) EXPECT_NEAR(zstar[d], z[d] + (qt[d] - qs[d]) / norm, 1e-12);
}

TEST(Loss, AverageProjectorOracle) {
  // With average pooling V^b is affine, so the loss can be written out by hand.
  BundleConfig cfg;
  cfg.backbone.conv_channels = {4, 8};
  cfg.embed_dim = 5;
  cfg.pooling = PoolingMode::average;
  const EncoderBundle b = EncoderBundle::initialize(cfg, Vocabulary({"x"}), 2);
  const auto& W = b.projector.proj.weight.value;
  const auto& bias = b.projector.proj.bias.value;
  auto affine = [&](const Tensor3& t) {
    std::vector<Real> m(8, 0);
    for (std::size_t y = 0; y < t.height(); ++y)
      for (std::size_t x = 0; x < t.width(); ++x)
        for (std::size_t c = 0; c < 8; ++c) m[c] += t(y, x, c) / static_cast<Real>(t.height() * t.width());
    std::vector<Real> out(5);
    for (std::size_t o = 0; o < 5; ++o) {
      out[o] = bias[o];
      for (std::size_t c = 0; c < 8; ++c) out[o] += W[o * 8 + c] * m[c];
    }
    return out;
  };
  std::vector<FeatureMap> crops{filled(4, 4, 8, 1), filled(4, 4, 8, 2)};
  std::vector<Tensor3> A{filled(4, 4, 8, 3, 0.3), filled(4, 4, 8, 4, 0.3)};
  std::vector<Embedding> z;
  std::vector<std::vector<Embedding>> zstar;
  for (const auto& c : crops) {
    z.push_back(affine(c));
    zstar.push_back({add(z.back(), Embedding{1, 0, 0, 0, 0}), add(z.back(), Embedding{0, 0.6, 0.8, 0, 0})});
  }
  Real expect = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t j = 0; j < 2; ++j) {
      Tensor3 sum = crops[c];
      sum += A[j];
      const auto zb = affine(sum);
      Real dotv = 0, na = 0, nb = 0, l1 = 0;
      for (std::size_t d = 0; d < 5; ++d) {
        dotv += zb[d] * zstar[c][j][d];
        na += zb[d] * zb[d];
        nb += zstar[c][j][d] * zstar[c][j][d];
        l1 += std::abs(zb[d] - z[c][d]);
      }
      expect += 1 - dotv / std::sqrt(na * nb) + 0.7 * l1;
    }
  EXPECT_NEAR(augmentation_loss(crops, z, zstar, A, b, 0.7), expect, 1e-12);
  // At A = 0 the L1 term vanishes and only the cosine distances remain.
  std::vector<Tensor3> zero{Tensor3(4, 4, 8), Tensor3(4, 4, 8)};
  Real at_zero = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t j = 0; j < 2; ++j) at_zero += cosine_distance(zstar[c][j], z[c]);
  EXPECT_NEAR(augmentation_loss(crops, z, zstar, zero, b, 0.7), at_zero, 1e-12);
  EXPECT_THROW(augmentation_loss(crops, z, zstar, {Tensor3(2, 2, 8), Tensor3(4, 4, 8)}, b, 1.0), InvalidInput);
  EXPECT_THROW(augmentation_loss(crops, z, zstar, A, b, -1.0), InvalidInput);
}

TEST(Loss, GradientMatchesCentralDifferences) {
  for (auto mode : {PoolingMode::attention, PoolingMode::average})
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto r = test::check_lopt_gradient(mode, seed);
      EXPECT_EQ(r.entries, 2u * 4 * 4 * 8);
      EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed;
    }
}

TEST(Apply, PooledAdditionAtEveryPosition) {
  const Tensor3 A = filled(3, 5, 4, 8);
  const auto pooled = pool_augmentation(A);
  for (std::size_t c = 0; c < 4; ++c) {
    Real s = 0;
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 5; ++x) s += A(y, x, c);
    EXPECT_NEAR(pooled[c], s / 15, 1e-12);
  }
  const FeatureMap fm = filled(6, 6, 4, 9);
  const FeatureMap out = apply_augmentation(fm, pooled);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out(y, x, c), fm(y, x, c) + pooled[c]);
  EXPECT_THROW(apply_augmentation(fm, std::vector<Real>(3)), InvalidInput);
}

TEST(Optimizer, ReducesLossDeterministicallyAndLeavesBundleAlone) {
  const EncoderBundle& b = test::small_pretrained_bundle();
  EncoderBundle before = b;
  OptConfig cfg;
  cfg.iterations = 150;
  cfg.crops_per_image = 2;
  cfg.seed = 4;
  const auto imgs = source_images(10);
  const AugmentationSet set = optimize_augmentations(imgs, two_prompts(), b, cfg);
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set.augmentations[0].tensor.height(), 8u);
  EXPECT_EQ(set.augmentations[0].tensor.channels(), 32u);
  EXPECT_EQ(set.loss_log.size(), 150u);
  EXPECT_EQ(set.target_prompts[1], "an image taken on a fog night");

  Rng rng(77);
  std::vector<FeatureMap> held;
  for (const auto& img : source_images(12)) held.push_back(crop_features(img, b, 64, 1, rng)[0]);
  std::vector<Tensor3> zero;
  for (const auto& a : set.augmentations) zero.emplace_back(8, 8, 32);
  EXPECT_LT(evaluate_loss(held, set, b, set.tensors()), evaluate_loss(held, set, b, zero));

  const AugmentationSet again = optimize_augmentations(imgs, two_prompts(), b, cfg);
  EXPECT_EQ(again.loss_log, set.loss_log);
  EXPECT_EQ(again.augmentations[1].tensor, set.augmentations[1].tensor);
  auto pa = before.parameters();
  auto pb = const_cast<EncoderBundle&>(b).parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].second->value, pb[i].second->value);
}

TEST(Optimizer, RejectsDegenerateAndBadConfig) {
  const EncoderBundle& b = test::small_pretrained_bundle();
  PromptSet p = two_prompts();
  p.targets[1].text = "an image taken during the day!";  // tokenizes like the source
  OptConfig cfg;
  cfg.iterations = 2;
  try {
    optimize_augmentations(source_images(2), p, b, cfg);
    ADD_FAILURE() << "expected DegenerateShift";
  } catch (const DegenerateShift& e) {
    EXPECT_EQ(e.prompt_id(), 2u);
  }
  cfg.iterations = 0;
  EXPECT_THROW(optimize_augmentations(source_images(2), two_prompts(), b, cfg), InvalidInput);
  cfg.iterations = 1;
  EXPECT_THROW(optimize_augmentations({}, two_prompts(), b, cfg), InvalidInput);
}

TEST(AugmentationSet, SaveLoadAndRandomArm) {
  const EncoderBundle& b = test::small_pretrained_bundle();
  OptConfig cfg;
  cfg.iterations = 5;
  const AugmentationSet set = optimize_augmentations(source_images(3), two_prompts(), b, cfg);
  const auto path = test::temp_dir("augset") / "aug.tnsa";
  set.save(path);
  const AugmentationSet back = AugmentationSet::load(path);
  ASSERT_EQ(back.size(), set.size());
  EXPECT_EQ(back.target_prompts, set.target_prompts);
  EXPECT_EQ(back.source_prompt, set.source_prompt);
  EXPECT_EQ(back.augmentations[1].prompt_id, 2u);
  for (std::size_t i = 0; i < set.augmentations[0].tensor.size(); ++i)
    EXPECT_EQ(back.augmentations[0].tensor.values()[i],
              static_cast<Real>(static_cast<float>(set.augmentations[0].tensor.values()[i])));
  back.save(test::temp_dir("augset") / "aug2.tnsa");
  EXPECT_EQ(read_file(path), read_file(test::temp_dir("augset") / "aug2.tnsa"));

  const AugmentationSet r = random_augmentations(15, 8, 8, 32, 0.2, 5);
  EXPECT_EQ(r.size(), 15u);
  EXPECT_EQ(r.kind, "random");
  EXPECT_NEAR(entry_stddev(r), 0.2, 0.01);
  EXPECT_EQ(random_augmentations(15, 8, 8, 32, 0.2, 5).augmentations[3].tensor, r.augmentations[3].tensor);
  EXPECT_EQ(entry_stddev(random_augmentations(2, 2, 2, 2, 0.0, 5)), 0.0);
  EXPECT_THROW(random_augmentations(0, 8, 8, 32, 0.2, 5), InvalidInput);
}

TEST(Alignment, ReportsBothMeans) {
  const EncoderBundle& b = test::small_pretrained_bundle();
  OptConfig cfg;
  cfg.iterations = 200;
  cfg.seed = 2;
  const AugmentationSet set = optimize_augmentations(source_images(10), two_prompts(), b, cfg);
  Rng rng(5);
  std::vector<FeatureMap> crops;
  for (const auto& img : source_images(8)) crops.push_back(crop_features(img, b, 64, 1, rng)[0]);
  const AlignmentReport r = evaluate_alignment(crops, set, b);
  ASSERT_EQ(r.augmented.size(), 2u);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_GE(r.unaugmented[j], -1.0);
    EXPECT_LE(r.unaugmented[j], 1.0);
    EXPECT_GT(r.augmented[j], r.unaugmented[j]);
  }
}
