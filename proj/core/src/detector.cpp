#include "semaug/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "config_io.hpp"
#include "json_io.hpp"
#include "semaug/archive.hpp"
#include "semaug/augment.hpp"
#include "semaug/errors.hpp"
#include "semaug/prompts.hpp"
#include "semaug/vecmath.hpp"

namespace semaug {

// ---------------------------------------------------------------------------
// Classifier pieces

ClassTextBank build_class_bank(const std::vector<std::string>& class_names, std::string_view templ,
                               const EncoderBundle& bundle) {
  if (class_names.empty()) throw InvalidInput("build_class_bank: no class names");
  std::set<std::string> seen;
  for (const auto& n : class_names)
    if (!seen.insert(n).second) throw InvalidInput("build_class_bank: duplicate class name '" + n + "'");
  ClassTextBank bank;
  bank.class_names = class_names;
  bank.rows.emplace_back(bundle.embed_dim(), 0.0);
  for (const auto& n : class_names) bank.rows.push_back(encode_text(fill_template(templ, n), bundle));
  return bank;
}

std::vector<Real> class_logits(std::span<const Real> region_feature, const ClassTextBank& bank,
                               Real logit_scale) {
  if (bank.rows.empty()) throw InvalidInput("class_logits: empty bank");
  if (region_feature.size() != bank.dim()) throw InvalidInput("class_logits: dimension mismatch");
  if (l2_norm(region_feature) == 0) throw InvalidInput("class_logits: zero-norm region feature");
  std::vector<Real> out(bank.rows.size(), 0.0);
  for (std::size_t k = 0; k < bank.rows.size(); ++k) {
    if (l2_norm(bank.rows[k]) == 0) continue;  // background: neutral logit
    out[k] = logit_scale * cosine_similarity(region_feature, bank.rows[k]);
  }
  return out;
}

Real clip_text_loss(const std::vector<std::vector<Real>>& logits, std::span<const std::size_t> labels,
                    std::vector<std::vector<Real>>* grad) {
  if (logits.size() != labels.size()) throw InvalidInput("clip_text_loss: logits/labels count mismatch");
  if (grad != nullptr) grad->assign(logits.size(), {});
  if (logits.empty()) return 0;
  Real total = 0;
  const Real inv = 1.0 / static_cast<Real>(logits.size());
  for (std::size_t r = 0; r < logits.size(); ++r) {
    if (labels[r] >= logits[r].size()) throw InvalidInput("clip_text_loss: label out of range");
    const Real mx = *std::max_element(logits[r].begin(), logits[r].end());
    Real z = 0;
    for (Real v : logits[r]) z += std::exp(v - mx);
    total += -(logits[r][labels[r]] - mx - std::log(z));
    if (grad != nullptr) {
      auto& g = (*grad)[r];
      g.resize(logits[r].size());
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = std::exp(logits[r][k] - mx) / z * inv;
      g[labels[r]] -= inv;
    }
  }
  return total * inv;
}

// ---------------------------------------------------------------------------
// Box coding and losses

namespace {
const Real kMaxLogScale = std::log(1000.0 / 16.0);
}

BoxDeltas encode_box(const Box& t, const Box& r) {
  const Real rw = r.width(), rh = r.height();
  const Real rx = r.x_min + 0.5 * rw, ry = r.y_min + 0.5 * rh;
  const Real tw = t.width(), th = t.height();
  const Real tx = t.x_min + 0.5 * tw, ty = t.y_min + 0.5 * th;
  return {(tx - rx) / rw, (ty - ry) / rh, std::log(tw / rw), std::log(th / rh)};
}

Box decode_box(const BoxDeltas& d, const Box& r) {
  const Real rw = r.width(), rh = r.height();
  const Real cx = r.x_min + 0.5 * rw + d[0] * rw;
  const Real cy = r.y_min + 0.5 * rh + d[1] * rh;
  const Real w = rw * std::exp(std::min(d[2], kMaxLogScale));
  const Real h = rh * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Real smooth_l1(Real x, Real beta) {
  const Real a = std::abs(x);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

namespace {
Real smooth_l1_grad(Real x, Real beta = 1.0) {
  if (std::abs(x) < beta) return x / beta;
  return x > 0 ? 1.0 : -1.0;
}
}  // namespace

Real box_regression_loss(const std::vector<BoxDeltas>& pred, const std::vector<BoxDeltas>& target,
                         std::vector<BoxDeltas>* grad) {
  if (pred.size() != target.size()) throw InvalidInput("box_regression_loss: shape mismatch");
  if (grad != nullptr) grad->assign(pred.size(), BoxDeltas{});
  if (pred.empty()) return 0;
  const Real inv = 1.0 / static_cast<Real>(pred.size());
  Real total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      const Real r = pred[i][k] - target[i][k];
      total += smooth_l1(r);
      if (grad != nullptr) (*grad)[i][k] = smooth_l1_grad(r) * inv;
    }
  return total * inv;
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes, std::span<const Real> scores,
                             Real iou_threshold) {
  if (boxes.size() != scores.size()) throw InvalidInput("nms: boxes/scores size mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : keep)
      if (iou(boxes[i], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

// ---------------------------------------------------------------------------
// Config

void DetectorConfig::validate() const {
  if (!(anchor_size > 0)) throw ConfigError("detector: anchor_size must be positive");
  if (aspect_ratios.empty()) throw ConfigError("detector: no aspect ratios");
  for (Real r : aspect_ratios)
    if (!(r > 0)) throw ConfigError("detector: aspect ratios must be positive");
  if (!(rpn_neg_iou <= rpn_pos_iou)) throw ConfigError("detector: rpn_neg_iou above rpn_pos_iou");
  if (roi_size == 0) throw ConfigError("detector: roi_size must be positive");
  if (!(roi_fg_fraction >= 0 && roi_fg_fraction <= 1)) throw ConfigError("detector: roi_fg_fraction outside [0, 1]");
  if (!(rpn_pos_fraction >= 0 && rpn_pos_fraction <= 1)) throw ConfigError("detector: rpn_pos_fraction outside [0, 1]");
  if (!(logit_scale > 0)) throw ConfigError("detector: logit_scale must be positive");
}

// ---------------------------------------------------------------------------
// Anchors, proposals

std::vector<Box> make_anchors(std::size_t grid_h, std::size_t grid_w, std::size_t stride,
                              const DetectorConfig& cfg) {
  std::vector<Box> out;
  out.reserve(grid_h * grid_w * cfg.aspect_ratios.size());
  const Real s = static_cast<Real>(stride);
  for (std::size_t y = 0; y < grid_h; ++y)
    for (std::size_t x = 0; x < grid_w; ++x) {
      const Real cx = (static_cast<Real>(x) + 0.5) * s, cy = (static_cast<Real>(y) + 0.5) * s;
      for (Real r : cfg.aspect_ratios) {
        const Real w = cfg.anchor_size / std::sqrt(r), h = cfg.anchor_size * std::sqrt(r);
        out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
      }
    }
  return out;
}

namespace {

Real sigmoid(Real x) { return x >= 0 ? 1 / (1 + std::exp(-x)) : std::exp(x) / (1 + std::exp(x)); }

struct RpnOutputs {
  Tensor3 hidden;  // post-ReLU
  Tensor3 obj;
  Tensor3 reg;
};

RpnOutputs rpn_forward(const DetectionModel& m, const FeatureMap& fm) {
  RpnOutputs o;
  o.hidden = m.rpn_conv.forward(fm);
  relu_inplace(o.hidden);
  o.obj = m.rpn_obj.forward(o.hidden);
  o.reg = m.rpn_reg.forward(o.hidden);
  return o;
}

BoxDeltas anchor_deltas(const Tensor3& reg, std::size_t anchor, std::size_t per_cell) {
  const std::size_t cell = anchor / per_cell, a = anchor % per_cell;
  const Real* p = reg.data() + cell * reg.channels() + 4 * a;
  return {p[0], p[1], p[2], p[3]};
}

std::vector<Proposal> proposals_from(const DetectionModel& m, const RpnOutputs& rpn,
                                     const std::vector<Box>& anchors, std::size_t image_h,
                                     std::size_t image_w, std::size_t top_n) {
  if (top_n == 0) return {};
  const std::size_t per_cell = m.num_anchors_per_cell();
  const Real W = static_cast<Real>(image_w), H = static_cast<Real>(image_h);
  std::vector<Box> boxes;
  std::vector<Real> scores;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    Box b = clip_box(decode_box(anchor_deltas(rpn.reg, a, per_cell), anchors[a]), W, H);
    if (b.width() < 1 || b.height() < 1) continue;
    boxes.push_back(b);
    scores.push_back(rpn.obj.data()[a]);
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (order.size() > m.config.pre_nms_top_n) order.resize(m.config.pre_nms_top_n);
  std::vector<Box> cand;
  std::vector<Real> cand_scores;
  for (std::size_t i : order) {
    cand.push_back(boxes[i]);
    cand_scores.push_back(scores[i]);
  }
  std::vector<Proposal> out;
  for (std::size_t i : nms(cand, cand_scores, m.config.proposal_nms)) {
    if (out.size() == top_n) break;
    out.push_back({cand[i], sigmoid(cand_scores[i])});
  }
  return out;
}

// Bilinear sample positions for ROI-Align.
struct Tap {
  std::size_t idx[4];
  Real w[4];
  bool valid;
};

Tap bilinear_tap(Real y, Real x, std::size_t H, std::size_t W) {
  Tap t{};
  if (y < -1.0 || y > static_cast<Real>(H) || x < -1.0 || x > static_cast<Real>(W)) {
    t.valid = false;
    return t;
  }
  t.valid = true;
  y = std::max(y, Real{0});
  x = std::max(x, Real{0});
  auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  std::size_t y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = static_cast<Real>(y0);
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = static_cast<Real>(x0);
  } else {
    x1 = x0 + 1;
  }
  const Real ly = y - static_cast<Real>(y0), lx = x - static_cast<Real>(x0);
  const Real hy = 1 - ly, hx = 1 - lx;
  t.idx[0] = y0 * W + x0;
  t.idx[1] = y0 * W + x1;
  t.idx[2] = y1 * W + x0;
  t.idx[3] = y1 * W + x1;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  return t;
}

template <class F>
void for_each_roi_sample(const Box& box, std::size_t stride, std::size_t out, std::size_t H, std::size_t W,
                         F&& f) {
  if (!(box.width() * box.height() >= 1.0) || !box.valid())
    throw InvalidInput("roi_align: box area below 1 px^2");
  const Real s = static_cast<Real>(stride);
  const Real y0 = box.y_min / s - 0.5, x0 = box.x_min / s - 0.5;
  const Real bh = box.height() / s / static_cast<Real>(out);
  const Real bw = box.width() / s / static_cast<Real>(out);
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t j = 0; j < out; ++j)
      f(i * out + j, bilinear_tap(y0 + (static_cast<Real>(i) + 0.5) * bh,
                                  x0 + (static_cast<Real>(j) + 0.5) * bw, H, W));
}

}  // namespace

Tensor3 roi_align(const FeatureMap& fm, const Box& box, std::size_t stride, std::size_t out) {
  const std::size_t C = fm.channels();
  Tensor3 r(out, out, C);
  const Real* src = fm.data();
  Real* dst = r.data();
  for_each_roi_sample(box, stride, out, fm.height(), fm.width(), [&](std::size_t bin, const Tap& t) {
    if (!t.valid) return;
    Real* o = dst + bin * C;
    for (int k = 0; k < 4; ++k) {
      const Real* p = src + t.idx[k] * C;
      const Real w = t.w[k];
      for (std::size_t c = 0; c < C; ++c) o[c] += w * p[c];
    }
  });
  return r;
}

void roi_align_backward(const Tensor3& grad, const Box& box, std::size_t stride, FeatureMap& grad_fm) {
  const std::size_t C = grad_fm.channels();
  const Real* g = grad.data();
  Real* dst = grad_fm.data();
  for_each_roi_sample(box, stride, grad.height(), grad_fm.height(), grad_fm.width(),
                      [&](std::size_t bin, const Tap& t) {
                        if (!t.valid) return;
                        const Real* gi = g + bin * C;
                        for (int k = 0; k < 4; ++k) {
                          Real* p = dst + t.idx[k] * C;
                          for (std::size_t c = 0; c < C; ++c) p[c] += t.w[k] * gi[c];
                        }
                      });
}

std::vector<Embedding> roi_features(const FeatureMap& fm, const std::vector<Box>& boxes,
                                    const Projector& projector, std::size_t stride, std::size_t roi_size) {
  std::vector<Embedding> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back(projector.forward(roi_align(fm, b, stride, roi_size)));
  return out;
}

// ---------------------------------------------------------------------------
// Model

DetectionModel DetectionModel::create(const EncoderBundle& init, const ClassTextBank& bank,
                                      const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (bank.dim() != init.embed_dim()) throw InvalidInput("DetectionModel: bank dimension differs from encoder");
  DetectionModel m;
  m.config = cfg;
  m.encoder_config = init.config;
  m.encoder_config.pooling = init.projector.mode;
  m.bank = bank;
  m.features = init.features;
  m.projector = init.projector;
  const std::size_t C = init.config.backbone.out_channels();
  const std::size_t A = cfg.aspect_ratios.size();
  m.rpn_conv = Conv2d(C, C, 3, 1, 1);
  m.rpn_obj = Conv2d(C, A, 1, 1, 0);
  m.rpn_reg = Conv2d(C, 4 * A, 1, 1, 0);
  const std::size_t roi_in = cfg.roi_size * cfg.roi_size * C;
  if (cfg.reg_hidden > 0) {
    m.reg_hidden = Linear(roi_in, cfg.reg_hidden);
    m.reg_out = Linear(cfg.reg_hidden, 4);
  } else {
    m.reg_out = Linear(roi_in, 4);
  }
  m.linear_cls = Linear(init.embed_dim(), bank.rows.size());

  Rng rng(seed);
  m.rpn_conv.weight.init_normal(rng, 0.01);
  m.rpn_obj.weight.init_normal(rng, 0.01);
  m.rpn_reg.weight.init_normal(rng, 0.01);
  if (cfg.reg_hidden > 0) m.reg_hidden.init_normal(rng, std::sqrt(2.0 / static_cast<Real>(roi_in)));
  m.reg_out.init_normal(rng, 0.001);
  m.linear_cls.init_normal(rng, 0.01);
  return m;
}

NamedParams DetectionModel::parameters() {
  NamedParams out;
  features.collect("features", out);
  projector.collect("projector", out);
  rpn_conv.collect("rpn.conv", out);
  rpn_obj.collect("rpn.obj", out);
  rpn_reg.collect("rpn.reg", out);
  if (config.reg_hidden > 0) reg_hidden.collect("roi.reg_hidden", out);
  reg_out.collect("roi.reg", out);
  if (config.classifier == ClassifierMode::linear) linear_cls.collect("roi.cls", out);
  return out;
}

void DetectionModel::zero_grad() {
  for (auto& [name, p] : parameters()) p->zero_grad();
}

std::vector<Proposal> DetectionModel::propose(const FeatureMap& fm, std::size_t image_h, std::size_t image_w,
                                              std::size_t top_n) const {
  const RpnOutputs rpn = rpn_forward(*this, fm);
  const auto anchors = make_anchors(fm.height(), fm.width(), stride(), config);
  return proposals_from(*this, rpn, anchors, image_h, image_w, top_n);
}

std::vector<Real> DetectionModel::logits(std::span<const Real> f) const {
  if (config.classifier == ClassifierMode::linear) return linear_cls.forward(f);
  return class_logits(f, bank, config.logit_scale);
}

namespace {

std::vector<Real> flatten(const Tensor3& t) { return {t.values().begin(), t.values().end()}; }

BoxDeltas regress(const DetectionModel& m, const std::vector<Real>& roi_flat, std::vector<Real>* hidden) {
  std::vector<Real> x = roi_flat;
  if (m.config.reg_hidden > 0) {
    x = m.reg_hidden.forward(roi_flat);
    for (Real& v : x) v = std::max(v, Real{0});
    if (hidden != nullptr) *hidden = x;
  }
  const auto y = m.reg_out.forward(x);
  return {y[0], y[1], y[2], y[3]};
}

}  // namespace

LossBreakdown DetectionModel::accumulate_gradients(const Image& image, const std::vector<Annotation>& gts,
                                                   std::span<const Real> augmentation, Rng& rng, Real weight) {
  FeatureExtractor::Cache fcache;
  FeatureMap fm = features.forward(image, &fcache);
  if (!augmentation.empty()) apply_augmentation_inplace(fm, augmentation);
  const std::size_t C = fm.channels();
  const std::size_t per_cell = num_anchors_per_cell();

  LossBreakdown loss;
  FeatureMap grad_fm(fm.height(), fm.width(), C);

  // ---- RPN
  const RpnOutputs rpn = rpn_forward(*this, fm);
  const auto anchors = make_anchors(fm.height(), fm.width(), stride(), config);
  const std::size_t NA = anchors.size(), NG = gts.size();
  std::vector<int> label(NA, -1);
  std::vector<std::size_t> matched(NA, 0);
  {
    std::vector<Real> best_for_gt(NG, 0.0);
    std::vector<Real> ious(NA * std::max<std::size_t>(NG, 1), 0.0);
    for (std::size_t a = 0; a < NA; ++a) {
      Real best = 0;
      for (std::size_t g = 0; g < NG; ++g) {
        const Real v = iou(anchors[a], gts[g].box);
        ious[a * NG + g] = v;
        if (v > best) {
          best = v;
          matched[a] = g;
        }
        best_for_gt[g] = std::max(best_for_gt[g], v);
      }
      if (best < config.rpn_neg_iou) label[a] = 0;
      if (best >= config.rpn_pos_iou) label[a] = 1;
    }
    for (std::size_t g = 0; g < NG; ++g) {
      if (best_for_gt[g] <= 0) continue;
      for (std::size_t a = 0; a < NA; ++a)
        if (ious[a * NG + g] == best_for_gt[g]) label[a] = 1;
    }
  }
  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < NA; ++a) {
    if (label[a] == 1) pos.push_back(a);
    if (label[a] == 0) neg.push_back(a);
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto max_pos = static_cast<std::size_t>(config.rpn_pos_fraction * static_cast<Real>(config.rpn_batch));
  pos.resize(std::min(pos.size(), max_pos));
  neg.resize(std::min(neg.size(), config.rpn_batch - pos.size()));

  Tensor3 g_obj(rpn.obj.height(), rpn.obj.width(), rpn.obj.channels());
  Tensor3 g_reg(rpn.reg.height(), rpn.reg.width(), rpn.reg.channels());
  const std::size_t n_sampled = pos.size() + neg.size();
  if (n_sampled > 0) {
    const Real inv = 1.0 / static_cast<Real>(n_sampled);
    auto bce = [&](std::size_t a, Real y) {
      const Real x = rpn.obj.data()[a];
      loss.rpn += (std::max(x, Real{0}) - x * y + std::log1p(std::exp(-std::abs(x)))) * inv;
      g_obj.data()[a] += (sigmoid(x) - y) * inv * weight;
    };
    for (std::size_t a : pos) bce(a, 1);
    for (std::size_t a : neg) bce(a, 0);
  }
  if (!pos.empty()) {
    std::vector<BoxDeltas> pred, target, grad;
    for (std::size_t a : pos) {
      pred.push_back(anchor_deltas(rpn.reg, a, per_cell));
      target.push_back(encode_box(gts[matched[a]].box, anchors[a]));
    }
    loss.rpn += box_regression_loss(pred, target, &grad);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const std::size_t cell = pos[i] / per_cell, k = pos[i] % per_cell;
      Real* p = g_reg.data() + cell * g_reg.channels() + 4 * k;
      for (int d = 0; d < 4; ++d) p[d] += grad[i][d] * weight;
    }
  }

  // ---- ROI sampling on detached proposals plus the ground truth
  std::vector<Box> rois;
  for (const auto& p : proposals_from(*this, rpn, anchors, image.height(), image.width(), config.post_nms_top_n))
    rois.push_back(p.box);
  for (const auto& g : gts) rois.push_back(g.box);
  std::vector<std::size_t> fg, bg;
  std::vector<std::size_t> roi_match(rois.size(), 0);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    Real best = 0;
    for (std::size_t g = 0; g < NG; ++g) {
      const Real v = iou(rois[r], gts[g].box);
      if (v > best) {
        best = v;
        roi_match[r] = g;
      }
    }
    (best >= config.roi_fg_iou ? fg : bg).push_back(r);
  }
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  const auto max_fg = static_cast<std::size_t>(config.roi_fg_fraction * static_cast<Real>(config.roi_batch));
  fg.resize(std::min(fg.size(), max_fg));
  bg.resize(std::min(bg.size(), config.roi_batch - fg.size()));

  std::vector<std::size_t> sampled = fg;
  sampled.insert(sampled.end(), bg.begin(), bg.end());
  const std::size_t n_fg = fg.size();

  std::vector<Tensor3> crops;
  std::vector<Projector::Cache> caches(sampled.size());
  std::vector<Embedding> feats;
  std::vector<std::vector<Real>> all_logits;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const std::size_t r = sampled[i];
    crops.push_back(roi_align(fm, rois[r], stride(), config.roi_size));
    feats.push_back(projector.forward(crops.back(), &caches[i]));
    all_logits.push_back(logits(feats.back()));
    labels.push_back(i < n_fg ? gts[roi_match[r]].class_id : 0);
  }
  std::vector<std::vector<Real>> g_logits;
  loss.clip = clip_text_loss(all_logits, labels, &g_logits);

  std::vector<BoxDeltas> reg_pred, reg_target, reg_grad;
  std::vector<std::vector<Real>> reg_hidden_act(n_fg);
  for (std::size_t i = 0; i < n_fg; ++i) {
    const std::size_t r = sampled[i];
    reg_pred.push_back(regress(*this, flatten(crops[i]), &reg_hidden_act[i]));
    reg_target.push_back(encode_box(gts[roi_match[r]].box, rois[r]));
  }
  loss.reg = box_regression_loss(reg_pred, reg_target, &reg_grad);

  for (std::size_t i = 0; i < sampled.size(); ++i) {
    std::vector<Real> gl = g_logits[i];
    for (Real& v : gl) v *= weight;
    std::vector<Real> g_feat(feats[i].size(), 0.0);
    if (config.classifier == ClassifierMode::linear) {
      g_feat = linear_cls.backward(feats[i], gl, true);
    } else {
      const auto& f = feats[i];
      const Real fn = l2_norm(f);
      for (std::size_t k = 1; k < bank.rows.size(); ++k) {
        const auto& q = bank.rows[k];
        const Real qn = l2_norm(q);
        if (qn == 0 || gl[k] == 0) continue;
        const Real cosv = dot(f, q) / (fn * qn);
        const Real s = gl[k] * config.logit_scale;
        for (std::size_t d = 0; d < f.size(); ++d) g_feat[d] += s * (q[d] / (fn * qn) - cosv * f[d] / (fn * fn));
      }
    }
    Tensor3 g_crop = projector.backward(crops[i], caches[i], g_feat, true);
    if (i < n_fg) {
      std::vector<Real> g_out(reg_grad[i].begin(), reg_grad[i].end());
      for (Real& v : g_out) v *= weight;
      std::vector<Real> g_in;
      if (config.reg_hidden > 0) {
        std::vector<Real> g_h = reg_out.backward(reg_hidden_act[i], g_out, true);
        for (std::size_t h = 0; h < g_h.size(); ++h)
          if (reg_hidden_act[i][h] <= 0) g_h[h] = 0;
        g_in = reg_hidden.backward(flatten(crops[i]), g_h, true);
      } else {
        g_in = reg_out.backward(flatten(crops[i]), g_out, true);
      }
      Real* gc = g_crop.data();
      for (std::size_t k = 0; k < g_in.size(); ++k) gc[k] += g_in[k];
    }
    roi_align_backward(g_crop, rois[sampled[i]], stride(), grad_fm);
  }

  // ---- RPN backward
  Tensor3 g_hidden = rpn_obj.backward(rpn.hidden, g_obj, true);
  g_hidden += rpn_reg.backward(rpn.hidden, g_reg, true);
  relu_backward(rpn.hidden, g_hidden);
  grad_fm += rpn_conv.backward(fm, g_hidden, true);

  // The augmentation is a broadcast add, so dL/d(V^a output) == grad_fm.
  features.backward(fcache, grad_fm);
  return loss;
}

// ---------------------------------------------------------------------------
// Inference

std::vector<Proposal> propose_regions(const FeatureMap& fm, const DetectionModel& model, std::size_t image_h,
                                      std::size_t image_w, std::size_t top_n) {
  return model.propose(fm, image_h, image_w, top_n);
}

std::vector<Detection> detect(const Image& image, const DetectionModel& model, Real score_threshold,
                              Real nms_iou) {
  const FeatureMap fm = model.features.forward(image);
  const auto proposals = model.propose(fm, image.height(), image.width(), model.config.post_nms_top_n);
  const Real W = static_cast<Real>(image.width()), H = static_cast<Real>(image.height());
  std::vector<Detection> raw;
  for (const auto& p : proposals) {
    const Tensor3 crop = roi_align(fm, p.box, model.stride(), model.config.roi_size);
    const Embedding f = model.projector.forward(crop);
    if (l2_norm(f) == 0) continue;
    const auto prob = softmax(model.logits(f));
    const auto best = static_cast<std::size_t>(std::max_element(prob.begin(), prob.end()) - prob.begin());
    if (best == 0 || !(prob[best] > score_threshold)) continue;
    const Box b = clip_box(decode_box(regress(model, flatten(crop), nullptr), p.box), W, H);
    if (!b.valid()) continue;
    raw.push_back({b, best, prob[best]});
  }
  std::vector<Detection> out;
  for (std::size_t k = 1; k <= model.bank.num_classes(); ++k) {
    std::vector<Box> boxes;
    std::vector<Real> scores;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < raw.size(); ++i)
      if (raw[i].class_id == k) {
        boxes.push_back(raw[i].box);
        scores.push_back(raw[i].score);
        idx.push_back(i);
      }
    for (std::size_t keep : nms(boxes, scores, nms_iou)) out.push_back(raw[idx[keep]]);
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (out.size() > model.config.max_detections) out.resize(model.config.max_detections);
  return out;
}

std::vector<Detection> detect(const Image& image, const DetectionModel& model) {
  return detect(image, model, model.config.score_threshold, model.config.nms_iou);
}

// ---------------------------------------------------------------------------
// Checkpoints


void DetectionModel::save(const std::filesystem::path& archive_path) const {
  DetectionModel copy = *this;  // parameters() hands out mutable pointers
  TensorArchive ar;
  for (auto& [name, p] : copy.parameters()) ar.add(name, p->shape, p->value);
  std::vector<Real> q;
  for (const auto& row : bank.rows) q.insert(q.end(), row.begin(), row.end());
  ar.add("bank.Q", {bank.rows.size(), bank.dim()}, q);
  ar.save(archive_path);

  nlohmann::json j;
  j["format"] = "semaug-detector";
  j["class_names"] = bank.class_names;
  j["iteration"] = iteration;
  j["config"] = detail::detector_config_to_json(config);
  j["encoder"] = {{"in_channels", encoder_config.backbone.in_channels},
                  {"conv_channels", encoder_config.backbone.conv_channels},
                  {"embed_dim", encoder_config.embed_dim},
                  {"token_dim", encoder_config.token_dim},
                  {"pooling", encoder_config.pooling == PoolingMode::attention ? "attention" : "average"}};
  detail::write_json(detail::sidecar_path(archive_path), j);
}

DetectionModel DetectionModel::load(const std::filesystem::path& archive_path) {
  const TensorArchive ar = TensorArchive::load(archive_path);
  const auto j = detail::read_json(detail::sidecar_path(archive_path));
  BundleConfig enc;
  DetectorConfig cfg;
  ClassTextBank bank;
  std::size_t iteration = 0;
  try {
    const auto& e = j.at("encoder");
    enc.backbone.in_channels = e.at("in_channels").get<std::size_t>();
    enc.backbone.conv_channels = e.at("conv_channels").get<std::vector<std::size_t>>();
    enc.embed_dim = e.at("embed_dim").get<std::size_t>();
    enc.token_dim = e.at("token_dim").get<std::size_t>();
    enc.pooling = e.at("pooling").get<std::string>() == "average" ? PoolingMode::average : PoolingMode::attention;
    cfg = detail::detector_config_from_json(j.at("config"), DetectorConfig{});
    bank.class_names = j.at("class_names").get<std::vector<std::string>>();
    iteration = j.value("iteration", std::size_t{0});
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError("detector sidecar for '" + archive_path.string() + "': " + ex.what());
  }
  const ArchiveEntry& q = ar.get("bank.Q");
  if (q.shape.size() != 2 || q.shape[0] != bank.class_names.size() + 1 || q.shape[1] != enc.embed_dim)
    throw LoadError("detector archive: bank.Q has the wrong shape");
  for (std::size_t k = 0; k < q.shape[0]; ++k)
    bank.rows.emplace_back(q.data.begin() + static_cast<long>(k * q.shape[1]),
                           q.data.begin() + static_cast<long>((k + 1) * q.shape[1]));

  EncoderBundle shell = EncoderBundle::initialize(enc, Vocabulary(), 0);
  DetectionModel m = create(shell, bank, cfg, 0);
  m.iteration = iteration;
  for (auto& [name, p] : m.parameters()) {
    const ArchiveEntry& entry = ar.get(name);
    if (entry.data.size() != p->size()) throw LoadError("detector archive: entry '" + name + "' has the wrong size");
    std::copy(entry.data.begin(), entry.data.end(), p->value.begin());
  }
  return m;
}

}  // namespace semaug
