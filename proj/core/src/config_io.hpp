#pragma once

#include <set>
#include <string>

#include "json.hpp"
#include "semaug/detector.hpp"
#include "semaug/errors.hpp"

namespace semaug::detail {

inline nlohmann::json detector_config_to_json(const DetectorConfig& c) {
  return {{"anchor_size", c.anchor_size},
          {"aspect_ratios", c.aspect_ratios},
          {"pre_nms_top_n", c.pre_nms_top_n},
          {"post_nms_top_n", c.post_nms_top_n},
          {"proposal_nms", c.proposal_nms},
          {"rpn_pos_iou", c.rpn_pos_iou},
          {"rpn_neg_iou", c.rpn_neg_iou},
          {"rpn_batch", c.rpn_batch},
          {"rpn_pos_fraction", c.rpn_pos_fraction},
          {"roi_batch", c.roi_batch},
          {"roi_fg_fraction", c.roi_fg_fraction},
          {"roi_fg_iou", c.roi_fg_iou},
          {"roi_size", c.roi_size},
          {"reg_hidden", c.reg_hidden},
          {"logit_scale", c.logit_scale},
          {"classifier", c.classifier == ClassifierMode::text ? "text" : "linear"},
          {"score_threshold", c.score_threshold},
          {"nms_iou", c.nms_iou},
          {"max_detections", c.max_detections}};
}

/// Overrides fields of `base` present in `j`; unknown keys are a ConfigError.
inline DetectorConfig detector_config_from_json(const nlohmann::json& j, DetectorConfig c) {
  static const std::set<std::string> known{
      "anchor_size", "aspect_ratios", "pre_nms_top_n", "post_nms_top_n", "proposal_nms",
      "rpn_pos_iou", "rpn_neg_iou", "rpn_batch", "rpn_pos_fraction", "roi_batch",
      "roi_fg_fraction", "roi_fg_iou", "roi_size", "reg_hidden", "logit_scale",
      "classifier", "score_threshold", "nms_iou", "max_detections"};
  if (!j.is_object()) throw ConfigError("detector config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown detector config key '" + k + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("anchor_size", c.anchor_size);
    get("aspect_ratios", c.aspect_ratios);
    get("pre_nms_top_n", c.pre_nms_top_n);
    get("post_nms_top_n", c.post_nms_top_n);
    get("proposal_nms", c.proposal_nms);
    get("rpn_pos_iou", c.rpn_pos_iou);
    get("rpn_neg_iou", c.rpn_neg_iou);
    get("rpn_batch", c.rpn_batch);
    get("rpn_pos_fraction", c.rpn_pos_fraction);
    get("roi_batch", c.roi_batch);
    get("roi_fg_fraction", c.roi_fg_fraction);
    get("roi_fg_iou", c.roi_fg_iou);
    get("roi_size", c.roi_size);
    get("reg_hidden", c.reg_hidden);
    get("logit_scale", c.logit_scale);
    get("score_threshold", c.score_threshold);
    get("nms_iou", c.nms_iou);
    get("max_detections", c.max_detections);
    if (j.contains("classifier")) {
      const auto mode = j.at("classifier").get<std::string>();
      if (mode == "text") c.classifier = ClassifierMode::text;
      else if (mode == "linear") c.classifier = ClassifierMode::linear;
      else throw ConfigError("unknown classifier '" + mode + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("detector config: ") + ex.what());
  }
  c.validate();
  return c;
}

}  // namespace semaug::detail
