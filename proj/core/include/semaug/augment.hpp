#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semaug/embedding.hpp"
#include "semaug/prompts.hpp"
#include "semaug/tensor.hpp"

namespace semaug {

/// Unit direction from q_s to q_t. Throws DegenerateShift when the two
/// embeddings (nearly) coincide.
Embedding embedding_shift(const Embedding& q_s, const Embedding& q_t);

/// z + shift.
Embedding target_embedding(const Embedding& z, const Embedding& shift);

/// V^b(crop_features + A).
Embedding augmented_projection(const FeatureMap& crop_features, const Tensor3& A,
                               const EncoderBundle& bundle);

/// Sum over crops c and augmentations j of
///   D(zstar[c][j], V^b(crops[c] + A[j])) + l1_weight * |V^b(crops[c] + A[j]) - z[c]|_1
/// with D the cosine distance. When `grad` is given it receives dL/dA[j].
Real augmentation_loss(const std::vector<FeatureMap>& crops, const std::vector<Embedding>& z,
                       const std::vector<std::vector<Embedding>>& zstar, const std::vector<Tensor3>& A,
                       const EncoderBundle& bundle, Real l1_weight,
                       std::vector<Tensor3>* grad = nullptr);

struct OptConfig {
  std::size_t iterations = 1000;
  Real learning_rate = 0.01;
  std::size_t crop_size = 64;
  std::size_t crops_per_image = 4;
  std::size_t images_per_batch = 1;
  Real l1_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Augmentation {
  std::size_t id = 0;         // j, 1..M
  Tensor3 tensor;             // A_j
  std::size_t prompt_id = 0;  // PromptSet target id
};

struct AugmentationSet {
  std::vector<Augmentation> augmentations;
  std::string source_prompt;
  Embedding source_embedding;  // q^s
  std::vector<std::string> target_prompts;
  std::vector<Embedding> target_embeddings;  // q^t_j
  std::vector<Real> loss_log;
  OptConfig config;
  std::string kind = "semantic";

  std::size_t size() const noexcept { return augmentations.size(); }
  std::vector<Tensor3> tensors() const;

  /// Archive entries "A_1".."A_M" plus a JSON sidecar with prompts,
  /// embeddings, config and the loss log.
  void save(const std::filesystem::path& archive_path) const;
  static AugmentationSet load(const std::filesystem::path& archive_path);
};

/// V^a features of `crop_size` x `crop_size` random crops of `image`.
std::vector<FeatureMap> crop_features(const Image& image, const EncoderBundle& bundle,
                                      std::size_t crop_size, std::size_t n, Rng& rng);

/// Zero-initialised Adam minimisation of augmentation_loss on crops resampled
/// every iteration. The bundle is read only.
AugmentationSet optimize_augmentations(const std::vector<Image>& source_images, const PromptSet& prompts,
                                       const EncoderBundle& bundle, const OptConfig& cfg);

/// Same shapes as an optimised set but entries drawn from N(0, sigma^2).
AugmentationSet random_augmentations(std::size_t count, std::size_t height, std::size_t width,
                                     std::size_t channels, Real sigma, std::uint64_t seed);

/// Standard deviation of all entries of all tensors.
Real entry_stddev(const AugmentationSet& set);

/// Per prompt j, mean over crops of cos(z_bar_j, z*_j) and cos(z, z*_j).
struct AlignmentReport {
  std::vector<Real> augmented;
  std::vector<Real> unaugmented;
};
AlignmentReport evaluate_alignment(const std::vector<FeatureMap>& crops, const AugmentationSet& set,
                                   const EncoderBundle& bundle);

/// augmentation_loss with z* built from the set's prompt embeddings.
Real evaluate_loss(const std::vector<FeatureMap>& crops, const AugmentationSet& set,
                   const EncoderBundle& bundle, const std::vector<Tensor3>& A);

/// Spatial mean of each channel.
std::vector<Real> pool_augmentation(const Tensor3& A);

/// Adds `pooled` to every spatial position of `fm`.
FeatureMap apply_augmentation(const FeatureMap& fm, std::span<const Real> pooled);
void apply_augmentation_inplace(FeatureMap& fm, std::span<const Real> pooled);

}  // namespace semaug
