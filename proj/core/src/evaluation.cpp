#include "semaug/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "json_io.hpp"
#include "semaug/errors.hpp"

namespace semaug {

std::vector<bool> match_detections(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                   Real iou_threshold) {
  std::vector<bool> used(gts.size(), false);
  std::vector<bool> tp(preds.size(), false);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    Real best = -1;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const Real v = iou(preds[p], gts[g]);
      if (v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gts.size() && best > iou_threshold) {
      used[best_g] = true;
      tp[p] = true;
    }
  }
  return tp;
}

Real average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt) {
  if (n_gt == 0) return 0;
  std::stable_sort(flags.begin(), flags.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
  std::vector<Real> recall{0}, precision{0};
  std::size_t tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i].true_positive) ++tp;
    recall.push_back(static_cast<Real>(tp) / static_cast<Real>(n_gt));
    precision.push_back(static_cast<Real>(tp) / static_cast<Real>(i + 1));
  }
  recall.push_back(1);
  precision.push_back(0);
  for (std::size_t i = precision.size() - 1; i-- > 0;) precision[i] = std::max(precision[i], precision[i + 1]);
  Real ap = 0;
  for (std::size_t i = 1; i < recall.size(); ++i) ap += (recall[i] - recall[i - 1]) * precision[i];
  return ap;
}

DomainResult evaluate_detections(const std::vector<std::vector<Detection>>& detections,
                                 const Dataset& dataset, Real iou_threshold) {
  if (dataset.samples.empty()) throw InvalidInput("evaluate: empty dataset");
  if (detections.size() != dataset.samples.size())
    throw InvalidInput("evaluate: one detection list per image required");
  const std::size_t K = dataset.class_names.size();
  DomainResult r;
  r.domain = dataset.samples.front().domain;
  r.images = dataset.samples.size();
  r.gt_per_class.assign(K, 0);
  r.ap.assign(K, 0.0);
  std::vector<std::vector<ScoredFlag>> flags(K);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& anns = dataset.samples[i].annotations;
    for (std::size_t k = 1; k <= K; ++k) {
      std::vector<Box> gts;
      for (const auto& a : anns)
        if (a.class_id == k) gts.push_back(a.box);
      r.gt_per_class[k - 1] += gts.size();
      std::vector<const Detection*> preds;
      for (const auto& d : detections[i])
        if (d.class_id == k) preds.push_back(&d);
      std::stable_sort(preds.begin(), preds.end(),
                       [](const Detection* a, const Detection* b) { return a->score > b->score; });
      std::vector<Box> boxes;
      for (const auto* d : preds) boxes.push_back(d->box);
      const auto tp = match_detections(boxes, gts, iou_threshold);
      for (std::size_t p = 0; p < preds.size(); ++p) flags[k - 1].push_back({preds[p]->score, tp[p]});
    }
  }
  std::size_t present = 0;
  Real sum = 0;
  for (std::size_t k = 0; k < K; ++k) {
    r.ap[k] = average_precision(flags[k], r.gt_per_class[k]);
    if (r.gt_per_class[k] > 0) {
      ++present;
      sum += r.ap[k];
    }
  }
  r.map = present > 0 ? sum / static_cast<Real>(present) : 0;
  return r;
}

DomainResult evaluate_map(const DetectionModel& model, const Dataset& dataset, Real iou_threshold) {
  if (dataset.samples.empty()) throw InvalidInput("evaluate_map: empty dataset");
  std::vector<std::vector<Detection>> dets;
  dets.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) dets.push_back(detect(s.image, model));
  return evaluate_detections(dets, dataset, iou_threshold);
}

void EvalReport::save_json(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["iou_threshold"] = iou_threshold;
  j["class_names"] = class_names;
  j["domains"] = nlohmann::json::array();
  for (const auto& d : domains) {
    nlohmann::json ap = nlohmann::json::object();
    for (std::size_t k = 0; k < d.ap.size() && k < class_names.size(); ++k) ap[class_names[k]] = d.ap[k];
    j["domains"].push_back({{"domain", d.domain},
                            {"images", d.images},
                            {"gt_per_class", d.gt_per_class},
                            {"ap", ap},
                            {"mAP", d.map}});
  }
  detail::write_json(path, j);
}

std::string EvalReport::markdown() const {
  std::string out = "| Domain |";
  for (const auto& c : class_names) out += " " + c + " |";
  out += " mAP |\n|---|";
  for (std::size_t k = 0; k < class_names.size(); ++k) out += "---|";
  out += "---|\n";
  char buf[32];
  for (const auto& d : domains) {
    out += "| " + d.domain + " |";
    for (Real ap : d.ap) {
      std::snprintf(buf, sizeof(buf), " %.1f |", 100 * ap);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), " %.1f |\n", 100 * d.map);
    out += buf;
  }
  return out;
}

}  // namespace semaug
