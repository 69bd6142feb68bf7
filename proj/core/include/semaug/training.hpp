#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "semaug/augment.hpp"
#include "semaug/data.hpp"
#include "semaug/detector.hpp"
#include "semaug/embedding.hpp"

namespace semaug {

struct TrainConfig {
  std::size_t iterations = 80000;
  Real learning_rate = 1e-3;
  Real lr_decay_factor = 0.1;
  std::size_t lr_decay_at = 40000;
  std::size_t batch_size = 4;
  Real theta = 0.5;
  Real flip_prob = 0.5;
  Real momentum = 0.9;
  Real weight_decay = 1e-4;
  /// Rescale the batch gradient to at most this L2 norm; 0 disables.
  Real grad_clip = 0;
  std::uint64_t seed = 0;
  /// Freeze the first V^a block; only meaningful for a pretrained image branch.
  bool pretrained_init = true;
  DetectorConfig detector;

  /// Desk-scale settings for 64x64 synthetic scenes.
  static TrainConfig toy();

  void validate() const;
  Real learning_rate_at(std::size_t iteration) const noexcept;
};

TrainConfig train_config_from_json(const std::filesystem::path& path, const TrainConfig& base);
void save_train_config(const std::filesystem::path& path, const TrainConfig& cfg);

struct SampledAugmentation {
  std::size_t id = 0;  // 1..M
  std::vector<Real> pooled;
};

/// With probability theta, the pooled tensor of a uniformly drawn A_j.
std::optional<SampledAugmentation> sample_augmentation(const AugmentationSet& set, Real theta, Rng& rng);

struct TrainRecord {
  std::size_t iteration = 0;
  Real lr = 0;
  LossBreakdown loss;
  Real total = 0;
  bool aug_applied = false;
  std::optional<std::size_t> aug_id;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  /// One JSON object per line.
  std::string to_jsonl() const;
  void save(const std::filesystem::path& path) const;
};

struct TrainResult {
  DetectionModel model;
  TrainLog log;
};

using TrainProgress = std::function<void(const TrainRecord&)>;

/// SGD on L_rpn + L_reg + L_clip-t. Each batch receives, with probability
/// cfg.theta, one pooled augmentation added to every image's V^a output.
/// `augmentations` may be empty when cfg.theta == 0.
TrainResult train_detector(const Dataset& dataset, const EncoderBundle& bundle,
                           const AugmentationSet& augmentations, const ClassTextBank& bank,
                           const TrainConfig& cfg, const TrainProgress& progress = {});

}  // namespace semaug
