#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "semaug/augment.hpp"
#include "semaug/data.hpp"
#include "semaug/detector.hpp"
#include "semaug/embedding.hpp"
#include "semaug/prompts.hpp"
#include "semaug/training.hpp"

namespace semaug {

enum class AugArm { semantic, none, random, off_concept };

/// One grid row: image-branch init x classifier x pooling x augmentation.
struct AblationRow {
  std::string name;
  bool pretrained = true;
  ClassifierMode classifier = ClassifierMode::text;
  PoolingMode pooling = PoolingMode::attention;
  AugArm aug = AugArm::semantic;
};

/// Parses {"name", "init": pretrained|random, "loss": text|linear,
/// "pool": attention|average, "aug": sem|none|random|off-concept}. Missing
/// keys keep the defaults; unknown keys or values throw ConfigError.
std::vector<AblationRow> load_ablation_grid(const std::filesystem::path& path);
std::vector<AblationRow> parse_ablation_grid(const std::string& json_text);
std::string describe(const AblationRow& row);

/// Prompts "an image of {desert|ocean|forest|mountain}" with the usual
/// source prompt.
PromptSet off_concept_prompts();

struct AblationInputs {
  Dataset train;                  // single source domain
  std::vector<Dataset> eval;      // one per domain; domain name from samples
  std::string source_domain = "clear";
  EncoderBundle pretrained;       // image init for pretrained rows, text branch for all
  PromptSet prompts;
  OptConfig opt;
  TrainConfig train_config;
  std::vector<std::uint64_t> seeds;
  /// Standard deviation of random-arm entries; negative means "match the
  /// optimised set of the same seed".
  Real random_sigma = -1;
};

struct AblationRowResult {
  AblationRow row;
  /// domain -> mAP per seed (seed order of the inputs)
  std::map<std::string, std::vector<Real>> per_seed;
  std::map<std::string, Real> median;
  /// Per seed: mean mAP over the target (non-source) domains.
  std::vector<Real> target_mean_per_seed;
  Real target_median = 0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> domains;
  std::string source_domain;
  std::vector<AblationRowResult> rows;

  void save_json(const std::filesystem::path& path) const;
  std::string markdown() const;
};

using AblationProgress = std::function<void(const std::string& message)>;

AblationReport run_ablation(const std::vector<AblationRow>& grid, const AblationInputs& inputs,
                            const AblationProgress& progress = {});

Real median(std::vector<Real> values);

}  // namespace semaug
