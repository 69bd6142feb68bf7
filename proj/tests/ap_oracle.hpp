#pragma once

// Independent AP reference used by the evaluation tests and the acceptance
// gate. Shares no code with the library's matcher or AP integrator.

#include <algorithm>
#include <random>
#include <vector>

#include "semaug/data.hpp"
#include "semaug/detector.hpp"

namespace oracle {

using semaug::Real;

inline Real box_iou(const semaug::Box& a, const semaug::Box& b) {
  const Real iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const Real ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0;
  const Real inter = iw * ih;
  const Real ua = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return ua > 0 ? inter / ua : 0;
}

struct Instance {
  semaug::Dataset dataset;
  std::vector<std::vector<semaug::Detection>> detections;
};

// Up to 5 images, jittered copies of the ground truth mixed with clutter and
// distinct scores.
inline Instance random_instance(std::uint64_t seed, std::size_t classes) {
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<Real> u(0, 1);
  auto rand_box = [&] {
    const Real x = 50 * u(rng), y = 50 * u(rng);
    return semaug::Box{x, y, x + 4 + 14 * u(rng), y + 4 + 14 * u(rng)};
  };
  Instance inst;
  for (std::size_t k = 0; k < classes; ++k) inst.dataset.class_names.push_back("c" + std::to_string(k));
  const std::size_t images = 1 + rng() % 5;
  std::vector<Real> scores;
  for (std::size_t i = 0; i < images; ++i) {
    semaug::SceneSample s;
    s.domain = "d";
    const std::size_t n_gt = rng() % 5;
    for (std::size_t g = 0; g < n_gt; ++g) s.annotations.push_back({rand_box(), 1 + rng() % classes});
    std::vector<semaug::Detection> dets;
    for (const auto& a : s.annotations) {
      const std::size_t copies = rng() % 3;
      for (std::size_t c = 0; c < copies; ++c) {
        semaug::Box b = a.box;
        const Real j = 3 * u(rng);
        b.x_min += j * (u(rng) - 0.5);
        b.x_max += j * (u(rng) - 0.5);
        b.y_min += j * (u(rng) - 0.5);
        b.y_max += j * (u(rng) - 0.5);
        const std::size_t cls = u(rng) < 0.8 ? a.class_id : 1 + rng() % classes;
        dets.push_back({b, cls, u(rng)});
      }
    }
    const std::size_t clutter = rng() % 4;
    for (std::size_t c = 0; c < clutter; ++c) dets.push_back({rand_box(), 1 + rng() % classes, u(rng)});
    std::shuffle(dets.begin(), dets.end(), rng);
    inst.dataset.samples.push_back(std::move(s));
    inst.detections.push_back(std::move(dets));
  }
  return inst;
}

struct Result {
  std::vector<Real> ap;
  Real map = 0;
};

// For every score cutoff, match from scratch and record (precision, recall);
// AP is the sum over each recall step 1/n_gt of the best precision reached at
// that recall or beyond.
inline Result brute_force_ap(const std::vector<std::vector<semaug::Detection>>& dets,
                             const semaug::Dataset& ds, Real thr) {
  Result out;
  Real sum = 0;
  std::size_t present = 0;
  const std::size_t K = ds.class_names.size();
  for (std::size_t k = 1; k <= K; ++k) {
    std::size_t n_gt = 0;
    for (const auto& s : ds.samples)
      for (const auto& a : s.annotations) n_gt += a.class_id == k;
    std::vector<Real> cutoffs;
    for (const auto& img : dets)
      for (const auto& d : img)
        if (d.class_id == k) cutoffs.push_back(d.score);
    std::sort(cutoffs.begin(), cutoffs.end(), std::greater<>());
    std::vector<std::pair<Real, Real>> pr;  // recall, precision
    for (Real cut : cutoffs) {
      std::size_t tp = 0, kept = 0;
      for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        std::vector<semaug::Detection> mine;
        for (const auto& d : dets[i])
          if (d.class_id == k && d.score >= cut) mine.push_back(d);
        std::sort(mine.begin(), mine.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
        std::vector<semaug::Box> gts;
        for (const auto& a : ds.samples[i].annotations)
          if (a.class_id == k) gts.push_back(a.box);
        std::vector<char> taken(gts.size(), 0);
        for (const auto& d : mine) {
          ++kept;
          int best = -1;
          Real best_iou = -1;
          for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            const Real v = box_iou(d.box, gts[g]);
            if (v > best_iou) {
              best_iou = v;
              best = static_cast<int>(g);
            }
          }
          if (best >= 0 && best_iou > thr) {
            taken[best] = 1;
            ++tp;
          }
        }
      }
      pr.emplace_back(n_gt ? Real(tp) / Real(n_gt) : 0, Real(tp) / Real(kept));
    }
    Real ap = 0;
    if (n_gt > 0) {
      for (std::size_t step = 1; step <= n_gt; ++step) {
        const Real r = Real(step) / Real(n_gt);
        Real best = 0;
        for (const auto& [rec, prec] : pr)
          if (rec >= r - 1e-12) best = std::max(best, prec);
        ap += best / Real(n_gt);
      }
      sum += ap;
      ++present;
    }
    out.ap.push_back(ap);
  }
  out.map = present ? sum / Real(present) : 0;
  return out;
}

}  // namespace oracle
