#pragma once

// Central-difference check of dL_opt/dA on a small random instance.

#include <algorithm>
#include <cmath>
#include <random>

#include "semaug/augment.hpp"

namespace test {

struct GradCheck {
  semaug::Real max_rel_error = 0;
  std::size_t entries = 0;
};

// 4x4xC feature crops, `prompts` augmentation tensors, embedding dim D.
inline GradCheck check_lopt_gradient(semaug::PoolingMode mode, std::uint64_t seed, std::size_t channels = 8,
                                     std::size_t prompts = 2, std::size_t crops = 3, std::size_t dim = 6) {
  using namespace semaug;
  BundleConfig cfg;
  cfg.backbone.conv_channels = {4, channels};
  cfg.embed_dim = dim;
  cfg.token_dim = 4;
  cfg.pooling = mode;
  cfg.projector_init_std = 0.3;
  EncoderBundle b = EncoderBundle::initialize(cfg, Vocabulary({"a", "b"}), seed);
  for (auto& v : b.projector.attention.wq.value) v *= 4;  // make the attention weights non-uniform

  Rng rng(seed + 100);
  std::normal_distribution<Real> n(0, 1);
  auto rand_t = [&] {
    Tensor3 t(4, 4, channels);
    for (auto& v : t.values()) v = n(rng);
    return t;
  };
  std::vector<FeatureMap> fms;
  std::vector<Embedding> z;
  std::vector<std::vector<Embedding>> zstar;
  for (std::size_t c = 0; c < crops; ++c) {
    fms.push_back(rand_t());
    z.push_back(b.projector.forward(fms.back()));
    auto& row = zstar.emplace_back();
    for (std::size_t j = 0; j < prompts; ++j) {
      Embedding s(dim);
      for (auto& v : s) v = n(rng);
      row.push_back(target_embedding(z.back(), embedding_shift(Embedding(dim, 0.0), s)));
    }
  }
  std::vector<Tensor3> A;
  for (std::size_t j = 0; j < prompts; ++j) {
    A.push_back(rand_t());
    for (auto& v : A.back().values()) v *= 0.5;
  }
  std::vector<Tensor3> grad;
  augmentation_loss(fms, z, zstar, A, b, 1.0, &grad);

  GradCheck out;
  const Real h = 1e-6;
  for (std::size_t j = 0; j < prompts; ++j)
    for (std::size_t i = 0; i < A[j].size(); ++i) {
      auto Ap = A, Am = A;
      Ap[j].values()[i] += h;
      Am[j].values()[i] -= h;
      const Real fd = (augmentation_loss(fms, z, zstar, Ap, b, 1.0) - augmentation_loss(fms, z, zstar, Am, b, 1.0)) /
                      (2 * h);
      const Real an = grad[j].values()[i];
      const Real rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.entries;
    }
  return out;
}

}  // namespace test
