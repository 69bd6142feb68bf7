#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "json.hpp"
#include "semaug/archive.hpp"
#include "semaug/errors.hpp"
#include "semaug/geometry.hpp"
#include "semaug/nn.hpp"
#include "semaug/vecmath.hpp"
#include "test_util.hpp"

using namespace semaug;

TEST(Archive, RoundTripIsBitExact) {
  TensorArchive a;
  const float specials[] = {0.0f, -0.0f, 1e-42f, std::numeric_limits<float>::max(),
                            std::numeric_limits<float>::infinity(), -3.25f};
  a.add_f32("specials", {2, 3}, std::vector<float>(std::begin(specials), std::end(specials)));
  std::mt19937_64 rng(5);
  std::normal_distribution<Real> n(0, 10);
  std::vector<Real> vals(4 * 5 * 6);
  for (auto& v : vals) v = n(rng);
  a.add("weights/conv", {4, 5, 6}, vals);
  a.add("scalar", {}, std::vector<Real>{0.1});
  a.add("empty", {0}, std::vector<Real>{});

  const auto path = test::temp_dir("archive") / "a.tnsa";
  a.save(path);
  const TensorArchive b = TensorArchive::load(path);
  ASSERT_EQ(a.entries().size(), b.entries().size());
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    EXPECT_EQ(x.name, y.name);
    EXPECT_EQ(x.shape, y.shape);
    ASSERT_EQ(x.data.size(), y.data.size());
    for (std::size_t k = 0; k < x.data.size(); ++k)
      EXPECT_EQ(std::bit_cast<std::uint32_t>(x.data[k]), std::bit_cast<std::uint32_t>(y.data[k]));
  }
  EXPECT_EQ(a.serialize(), b.serialize());
  EXPECT_EQ(a.serialize(), read_file(path));
  // Values come back as the f32 rounding of the input.
  const auto back = b.values("weights/conv");
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(back[i], static_cast<Real>(static_cast<float>(vals[i])));
}

TEST(Archive, LayoutMatchesDocumentedFormat) {
  TensorArchive a;
  a.add_f32("x", {2}, {1.5f, -2.0f});
  const std::string bytes = a.serialize();
  std::uint64_t header_len = 0;
  for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[i]);
  ASSERT_EQ(bytes.size(), 8 + header_len + 2 * 4);
  const auto header = nlohmann::json::parse(bytes.substr(8, header_len));
  EXPECT_EQ(header.at("version"), 1);
  EXPECT_EQ(header.at("entries").at(0).at("name"), "x");
  EXPECT_EQ(header.at("entries").at(0).at("dtype"), "f32");
  EXPECT_EQ(header.at("entries").at(0).at("shape"), nlohmann::json::array({2}));
  const unsigned char expect[8] = {0x00, 0x00, 0xc0, 0x3f, 0x00, 0x00, 0x00, 0xc0};  // 1.5f, -2.0f LE
  EXPECT_EQ(std::memcmp(bytes.data() + 8 + header_len, expect, 8), 0);
}

TEST(Archive, Errors) {
  TensorArchive a;
  a.add("w", {2}, std::vector<Real>{1, 2});
  EXPECT_THROW(a.add("w", {2}, std::vector<Real>{1, 2}), InvalidInput);
  EXPECT_THROW(a.add("v", {3}, std::vector<Real>{1, 2}), InvalidInput);
  EXPECT_THROW(a.get("missing"), LoadError);
  const std::string bytes = a.serialize();
  EXPECT_THROW(TensorArchive::deserialize(bytes.substr(0, 5)), LoadError);
  EXPECT_THROW(TensorArchive::deserialize(bytes.substr(0, bytes.size() - 1)), LoadError);
  EXPECT_THROW(TensorArchive::deserialize(bytes + "x"), LoadError);
  EXPECT_THROW(TensorArchive::load(test::temp_dir("archive") / "nope.tnsa"), IoError);
}

TEST(Geometry, IouAndFlip) {
  const Box a{0, 0, 10, 10}, b{5, 0, 15, 10};
  EXPECT_DOUBLE_EQ(iou(a, b), 50.0 / 150.0);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{10, 10, 20, 20}), 0.0);
  EXPECT_DOUBLE_EQ(iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
  EXPECT_EQ(flip_horizontal(flip_horizontal(b, 64), 64), b);
  EXPECT_EQ(flip_horizontal(a, 64), (Box{54, 0, 64, 10}));
  EXPECT_EQ(clip_box(Box{-3, 2, 70, 80}, 64, 64), (Box{0, 2, 64, 64}));
}

TEST(VecMath, CosineAndGradient) {
  const std::vector<Real> a{1, 2, 3}, b{-1, 0.5, 2};
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(cosine_distance(a, std::vector<Real>{-1, -2, -3}), 2.0, 1e-15);
  EXPECT_THROW(cosine_similarity(a, std::vector<Real>{0, 0, 0}), InvalidInput);
  EXPECT_THROW(dot(a, std::vector<Real>{1, 2}), InvalidInput);
  const auto g = cosine_distance_grad_b(a, b);
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto bp = b, bm = b;
    bp[i] += 1e-6;
    bm[i] -= 1e-6;
    EXPECT_NEAR(g[i], (cosine_distance(a, bp) - cosine_distance(a, bm)) / 2e-6, 1e-8);
  }
  const auto s = softmax(std::vector<Real>{1000, 1000, 0});
  EXPECT_NEAR(s[0], 0.5, 1e-12);
  EXPECT_NEAR(s[2], 0.0, 1e-12);
}

namespace {

Tensor3 random_tensor(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> n(0, 1);
  Tensor3 t(h, w, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// L = sum(out * weights) for a fixed random weight tensor.
Real weighted_sum(const Tensor3& out, const Tensor3& wts) {
  Real s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * wts.values()[i];
  return s;
}

}  // namespace

TEST(NeuralNet, ConvGradientsMatchFiniteDifferences) {
  Rng rng(11);
  Conv2d conv(3, 4, 3, 2, 1);
  conv.init_he(rng);
  for (auto& v : conv.bias.value) v = 0.1;
  const Tensor3 x = random_tensor(7, 6, 3, 1);
  const Tensor3 out = conv.forward(x);
  EXPECT_EQ(out.height(), 4u);
  EXPECT_EQ(out.width(), 3u);
  const Tensor3 wts = random_tensor(out.height(), out.width(), out.channels(), 2);
  conv.weight.zero_grad();
  conv.bias.zero_grad();
  const Tensor3 gx = conv.backward(x, wts, true);
  const Real h = 1e-6;
  for (std::size_t i = 0; i < conv.weight.size(); i += 7) {
    const Real keep = conv.weight.value[i];
    conv.weight.value[i] = keep + h;
    const Real lp = weighted_sum(conv.forward(x), wts);
    conv.weight.value[i] = keep - h;
    const Real lm = weighted_sum(conv.forward(x), wts);
    conv.weight.value[i] = keep;
    EXPECT_NEAR(conv.weight.grad[i], (lp - lm) / (2 * h), 1e-6);
  }
  for (std::size_t i = 0; i < x.size(); i += 5) {
    Tensor3 xp = x, xm = x;
    xp.values()[i] += h;
    xm.values()[i] -= h;
    EXPECT_NEAR(gx.values()[i], (weighted_sum(conv.forward(xp), wts) - weighted_sum(conv.forward(xm), wts)) / (2 * h),
                1e-6);
  }
}

TEST(NeuralNet, AttentionPoolIsConvexAndDifferentiable) {
  Rng rng(4);
  AttentionPool pool(5, 3);
  pool.init_normal(rng, 0.5);
  const Tensor3 x = random_tensor(3, 4, 5, 9);
  AttentionPool::Cache cache;
  const auto y = pool.forward(x, &cache);
  Real wsum = 0;
  for (Real w : cache.weights) {
    EXPECT_GE(w, 0);
    wsum += w;
  }
  EXPECT_NEAR(wsum, 1.0, 1e-12);
  for (std::size_t c = 0; c < 5; ++c) {
    Real lo = 1e9, hi = -1e9;
    for (std::size_t yy = 0; yy < 3; ++yy)
      for (std::size_t xx = 0; xx < 4; ++xx) {
        lo = std::min(lo, x(yy, xx, c));
        hi = std::max(hi, x(yy, xx, c));
      }
    EXPECT_GE(y[c], lo - 1e-12);
    EXPECT_LE(y[c], hi + 1e-12);
  }
  const std::vector<Real> gy{0.3, -1.0, 0.7, 0.2, -0.4};
  auto loss = [&](const Tensor3& in) {
    const auto o = pool.forward(in, nullptr);
    return dot(o, gy);
  };
  pool.wq.zero_grad();
  pool.wk.zero_grad();
  const Tensor3 gx = pool.backward(x, cache, gy);
  const Real h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor3 xp = x, xm = x;
    xp.values()[i] += h;
    xm.values()[i] -= h;
    EXPECT_NEAR(gx.values()[i], (loss(xp) - loss(xm)) / (2 * h), 1e-6);
  }
  for (Param* p : {&pool.wq, &pool.wk})
    for (std::size_t i = 0; i < p->size(); ++i) {
      const Real keep = p->value[i];
      p->value[i] = keep + h;
      const Real lp = loss(x);
      p->value[i] = keep - h;
      const Real lm = loss(x);
      p->value[i] = keep;
      EXPECT_NEAR(p->grad[i], (lp - lm) / (2 * h), 1e-6);
    }
}

TEST(NeuralNet, PoolingHelpers) {
  const Tensor3 x = random_tensor(5, 4, 2, 3);
  const auto m = average_pool(x);
  Real s0 = 0;
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t xx = 0; xx < 4; ++xx) s0 += x(y, xx, 0);
  EXPECT_NEAR(m[0], s0 / 20, 1e-12);
  const Tensor3 p = avg_pool2(x);
  EXPECT_EQ(p.height(), 2u);
  EXPECT_EQ(p.width(), 2u);
  EXPECT_NEAR(p(1, 1, 1), (x(2, 2, 1) + x(2, 3, 1) + x(3, 2, 1) + x(3, 3, 1)) / 4, 1e-12);
}

TEST(Optimizers, AdamAndSgdReduceAQuadratic) {
  for (int which = 0; which < 2; ++which) {
    Param p({3});
    p.value = {2, -1, 0.5};
    std::vector<Param*> ps{&p};
    Adam adam(0.05);
    Sgd sgd(0.1, 0.9, 0.0);
    for (int it = 0; it < 300; ++it) {
      p.zero_grad();
      for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2 * p.value[i];
      if (which == 0) adam.step(ps);
      else sgd.step(ps);
    }
    for (Real v : p.value) EXPECT_NEAR(v, 0.0, 1e-2);
  }
  Param frozen({1});
  frozen.value = {1};
  frozen.grad = {5};
  frozen.frozen = true;
  std::vector<Param*> fs{&frozen};
  Sgd(0.1, 0.9, 0.1).step(fs);
  EXPECT_EQ(frozen.value[0], 1.0);
}
