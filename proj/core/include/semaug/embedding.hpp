#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semaug/nn.hpp"
#include "semaug/tensor.hpp"

namespace semaug {

/// Closed word vocabulary of the toy text encoder. Id 0 is the reserved
/// unknown token.
class Vocabulary {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  /// Words needed by the shipped prompts, captions and class names.
  static Vocabulary toy_default();

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t id(std::string_view word) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Lowercases and splits on anything that is not a letter, digit or
  /// apostrophe. Unknown words map to id 0.
  std::vector<std::size_t> tokenize(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Text encoder T: token embedding table, mean over tokens, linear map to D.
class ToyTextEncoder {
 public:
  ToyTextEncoder() = default;
  ToyTextEncoder(Vocabulary vocab, std::size_t token_dim, std::size_t embed_dim);

  void init(Rng& rng);
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  std::size_t token_dim() const noexcept { return token_dim_; }
  std::size_t embed_dim() const noexcept { return proj.out_features(); }

  struct Cache {
    std::vector<std::size_t> tokens;
    std::vector<Real> mean;
  };
  Embedding encode(std::string_view prompt, Cache* cache = nullptr) const;
  void backward(const Cache& cache, std::span<const Real> grad_embedding);
  void collect(const std::string& prefix, NamedParams& out);

  Param table;  // vocab x token_dim
  Linear proj;

 private:
  Vocabulary vocab_;
  std::size_t token_dim_ = 0;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  /// Output channels of each stride-2 3x3 conv block; a final 2x2 average
  /// pool follows, so total stride is 2^(blocks + 1).
  std::vector<std::size_t> conv_channels{16, 32};

  std::size_t stride() const noexcept { return std::size_t{1} << (conv_channels.size() + 1); }
  std::size_t out_channels() const noexcept { return conv_channels.back(); }
  /// Smallest accepted image side: four output cells.
  std::size_t min_input() const noexcept { return 4 * stride(); }

  /// Three blocks ending at 1024 channels: 224x224 crops map to 14x14x1024.
  static BackboneConfig clip_scale();
};

/// Image feature extractor V^a.
class FeatureExtractor {
 public:
  struct Cache {
    std::vector<Tensor3> block_inputs;
    std::vector<Tensor3> block_outputs;  // post-ReLU
  };

  FeatureExtractor() = default;
  explicit FeatureExtractor(const BackboneConfig& cfg);

  void init(Rng& rng);
  const BackboneConfig& config() const noexcept { return cfg_; }

  /// Throws InvalidInput for undersized or wrong-channel images.
  FeatureMap forward(const Image& image, Cache* cache = nullptr) const;
  /// Accumulates gradients of all non-frozen conv blocks.
  void backward(const Cache& cache, const FeatureMap& grad_features);
  void collect(const std::string& prefix, NamedParams& out);

  std::vector<Conv2d> blocks;

 private:
  BackboneConfig cfg_;
};

/// Projector V^b: spatial pooling followed by a linear map to the embedding
/// space.
class Projector {
 public:
  struct Cache {
    AttentionPool::Cache attention;
    std::vector<Real> pooled;
  };

  Projector() = default;
  Projector(std::size_t channels, std::size_t embed_dim, PoolingMode mode);

  void init(Rng& rng);
  std::size_t channels() const noexcept { return proj.in_features(); }
  std::size_t embed_dim() const noexcept { return proj.out_features(); }
  PoolingMode mode = PoolingMode::attention;

  std::vector<Real> pool(const FeatureMap& fm, Cache* cache = nullptr) const;
  Embedding forward(const FeatureMap& fm, Cache* cache = nullptr) const;
  /// Returns dL/d(fm). Parameter gradients are accumulated only when
  /// `accumulate` is set.
  FeatureMap backward(const FeatureMap& fm, const Cache& cache, std::span<const Real> grad_embedding,
                      bool accumulate);
  FeatureMap input_grad(const FeatureMap& fm, const Cache& cache,
                        std::span<const Real> grad_embedding) const;
  void collect(const std::string& prefix, NamedParams& out);

  AttentionPool attention;
  Linear proj;
};

struct BundleConfig {
  BackboneConfig backbone;
  std::size_t embed_dim = 32;
  std::size_t token_dim = 32;
  PoolingMode pooling = PoolingMode::attention;
  /// Standard deviation of the projector's linear init. Embedding norms are
  /// never renormalised at the encoder output, so this sets their scale.
  Real projector_init_std = 0.05;
};

/// Text encoder T plus the split image encoder V = V^b o V^a.
struct EncoderBundle {
  BundleConfig config;
  std::uint64_t seed = 0;
  ToyTextEncoder text;
  FeatureExtractor features;
  Projector projector;

  static EncoderBundle initialize(const BundleConfig& config, const Vocabulary& vocab,
                                  std::uint64_t seed);

  std::size_t embed_dim() const noexcept { return config.embed_dim; }
  NamedParams parameters();
  NamedParams image_parameters();

  void save(const std::filesystem::path& archive_path) const;
  static EncoderBundle load(const std::filesystem::path& archive_path);
};

Embedding encode_text(std::string_view prompt, const EncoderBundle& bundle);
FeatureMap encode_image_features(const Image& image, const EncoderBundle& bundle);
Embedding project_features(const FeatureMap& fm, const EncoderBundle& bundle);
Embedding encode_image(const Image& image, const EncoderBundle& bundle);

/// Loading external pretrained checkpoints is not supported; always throws
/// ConfigError.
EncoderBundle load_pretrained_checkpoint(const std::filesystem::path& path);

struct CaptionedImage {
  Image image;
  std::string caption;
};

struct ToyPretrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 32;
  Real learning_rate = 2e-3;
  /// Cosine logits are divided by this before the softmax.
  Real temperature = 0.1;
  /// After training the projector is rescaled so image embeddings of the
  /// corpus have this mean L2 norm (the contrastive loss ignores scale, the
  /// unit text shift does not). 0 keeps the trained scale.
  Real embedding_norm = 0.035;
  std::uint64_t seed = 1;
};

struct PretrainReport {
  std::vector<Real> epoch_loss;
};

/// Symmetric contrastive training of all bundle parameters on image/caption
/// pairs. Fully determined by `cfg.seed`; epochs == 0 returns the
/// initialization.
EncoderBundle pretrain_toy_embedding(const std::vector<CaptionedImage>& dataset,
                                     const ToyPretrainConfig& cfg,
                                     const BundleConfig& arch = {},
                                     const Vocabulary& vocab = Vocabulary::toy_default(),
                                     PretrainReport* report = nullptr);

struct AlignmentStats {
  Real matched_mean = 0;
  Real mismatched_mean = 0;
  Real gap() const noexcept { return matched_mean - mismatched_mean; }
};

/// Mean cosine of matched vs mismatched image/caption pairs. Pairs whose
/// captions are textually identical are excluded from the mismatched mean.
AlignmentStats alignment_stats(const EncoderBundle& bundle, const std::vector<CaptionedImage>& data);

}  // namespace semaug
