#pragma once

// The seeded desk-scale setup shared by the trained-detector tests and the
// acceptance run: encoder pretrained on 2000 captioned scenes, 100 clear
// training scenes, 100 held-out scenes per benchmark domain.

#include <string>

#include "semaug/data.hpp"
#include "semaug/embedding.hpp"
#include "semaug/prompts.hpp"

namespace toy {

inline constexpr std::uint64_t kCorpusSeed = 1;
inline constexpr std::uint64_t kTrainSeed = 7;
inline constexpr std::uint64_t kEvalSeed = 4242;

inline const semaug::EncoderBundle& bundle() {
  static const semaug::EncoderBundle b =
      semaug::pretrain_toy_embedding(semaug::generate_caption_corpus(2000, 64, kCorpusSeed), semaug::ToyPretrainConfig{});
  return b;
}

inline semaug::Dataset train_set(std::size_t n = 100) {
  return semaug::generate_synthetic_domain(semaug::DomainSpec::preset("clear"), n, 64, semaug::toy_classes(),
                                           kTrainSeed);
}

inline semaug::Dataset eval_set(const std::string& domain, std::size_t n = 100) {
  return semaug::generate_synthetic_domain(semaug::DomainSpec::preset(domain), n, 64, semaug::toy_classes(),
                                           kEvalSeed);
}

inline std::vector<semaug::Image> images_of(const semaug::Dataset& ds) {
  std::vector<semaug::Image> out;
  for (const auto& s : ds.samples) out.push_back(s.image);
  return out;
}

inline semaug::PromptSet weather_prompts() {
  return semaug::generate_prompts(semaug::make_wordlist({"snow", "fog", "cloudy", "rain", "stormy"}, "toy"),
                                  semaug::make_wordlist({"day", "night", "evening"}, "toy"),
                                  semaug::kTargetTemplate, semaug::kSourcePrompt);
}

}  // namespace toy
