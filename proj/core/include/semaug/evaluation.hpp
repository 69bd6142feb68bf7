#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "semaug/data.hpp"
#include "semaug/detector.hpp"
#include "semaug/geometry.hpp"

namespace semaug {

/// Greedy matching of predictions (already sorted by descending score) to
/// same-class ground truths. A prediction is a true positive iff its best
/// IoU over still-unmatched ground truths is strictly above the threshold.
std::vector<bool> match_detections(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                   Real iou_threshold);

struct ScoredFlag {
  Real score = 0;
  bool true_positive = false;
};

/// All-point interpolated AP. Flags are ranked by descending score, ties in
/// input order. Returns 0 when n_gt == 0.
Real average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt);

struct DomainResult {
  std::string domain;
  std::size_t images = 0;
  std::vector<std::size_t> gt_per_class;  // index k-1
  std::vector<Real> ap;                   // index k-1
  Real map = 0;                           // over classes with >= 1 gt
};

struct EvalReport {
  Real iou_threshold = 0.5;
  std::vector<std::string> class_names;
  std::vector<DomainResult> domains;

  void save_json(const std::filesystem::path& path) const;
  /// One row per domain, one column per class plus mAP (percent).
  std::string markdown() const;
};

/// Per-class AP and mAP from precomputed detections, one list per image.
DomainResult evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                                 const Dataset& dataset, Real iou_threshold);

/// Runs detect() on every image of `dataset`.
DomainResult evaluate_map(const DetectionModel& model, const Dataset& dataset, Real iou_threshold = 0.5);

}  // namespace semaug
