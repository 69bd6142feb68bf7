#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semaug/data.hpp"
#include "semaug/embedding.hpp"
#include "semaug/geometry.hpp"
#include "semaug/nn.hpp"

namespace semaug {

/// Per-class prompt embeddings; row 0 is the all-zero background row.
struct ClassTextBank {
  std::vector<std::string> class_names;  // K names, class k is rows[k]
  std::vector<Embedding> rows;           // K + 1 rows

  std::size_t num_classes() const noexcept { return class_names.size(); }
  std::size_t dim() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
};

/// Rows 1..K are encode_text(template with the class name). Throws
/// InvalidInput on an empty or duplicated name list.
ClassTextBank build_class_bank(const std::vector<std::string>& class_names, std::string_view templ,
                               const EncoderBundle& bundle);

/// logit_scale * cos(F_r, Q_k); the background entry is 0.
std::vector<Real> class_logits(std::span<const Real> region_feature, const ClassTextBank& bank,
                               Real logit_scale = 1.0);

/// Mean over regions of -log softmax(logits)[label]. When `grad` is given it
/// receives dL/dlogits per region.
Real clip_text_loss(const std::vector<std::vector<Real>>& logits, std::span<const std::size_t> labels,
                    std::vector<std::vector<Real>>* grad = nullptr);

using BoxDeltas = std::array<Real, 4>;  // dx, dy, dw, dh

BoxDeltas encode_box(const Box& target, const Box& reference);
Box decode_box(const BoxDeltas& deltas, const Box& reference);

Real smooth_l1(Real x, Real beta = 1.0);
/// Smooth-L1 summed over the 4 coordinates, averaged over rows; 0 for no rows.
Real box_regression_loss(const std::vector<BoxDeltas>& pred, const std::vector<BoxDeltas>& target,
                         std::vector<BoxDeltas>* grad = nullptr);

/// Greedy NMS: visits boxes by descending score (ties by index) and drops any
/// box whose IoU with an already kept box exceeds `iou_threshold`.
std::vector<std::size_t> nms(const std::vector<Box>& boxes, std::span<const Real> scores,
                             Real iou_threshold);

enum class ClassifierMode { text, linear };

struct DetectorConfig {
  Real anchor_size = 20;
  std::vector<Real> aspect_ratios{0.5, 1.0, 2.0};  // height / width
  std::size_t pre_nms_top_n = 300;
  std::size_t post_nms_top_n = 64;
  Real proposal_nms = 0.7;
  Real rpn_pos_iou = 0.7;
  Real rpn_neg_iou = 0.3;
  std::size_t rpn_batch = 64;
  Real rpn_pos_fraction = 0.5;
  std::size_t roi_batch = 32;
  Real roi_fg_fraction = 0.25;
  Real roi_fg_iou = 0.5;
  std::size_t roi_size = 7;
  std::size_t reg_hidden = 0;  // 0: direct linear regression from ROI features
  Real logit_scale = 1.0;
  ClassifierMode classifier = ClassifierMode::text;
  Real score_threshold = 0.05;
  Real nms_iou = 0.5;
  std::size_t max_detections = 100;

  void validate() const;
};

struct Proposal {
  Box box;
  Real objectness = 0;
};

struct Detection {
  Box box;
  std::size_t class_id = 0;  // 1..K
  Real score = 0;
};

struct LossBreakdown {
  Real rpn = 0;
  Real reg = 0;
  Real clip = 0;
  Real total() const noexcept { return rpn + reg + clip; }
};

/// Two-stage detector: V^a, RPN, ROI-Align, V^b + text-bank classifier and a
/// class-agnostic box regressor on the ROI features.
class DetectionModel {
 public:
  DetectorConfig config;
  BundleConfig encoder_config;
  ClassTextBank bank;
  FeatureExtractor features;
  Projector projector;
  Conv2d rpn_conv;
  Conv2d rpn_obj;
  Conv2d rpn_reg;
  Linear reg_hidden;
  Linear reg_out;
  Linear linear_cls;  // (K+1) x D, only used by the linear classifier
  std::size_t iteration = 0;

  /// Image branch copied from `init`; heads drawn from `seed`.
  static DetectionModel create(const EncoderBundle& init, const ClassTextBank& bank,
                               const DetectorConfig& cfg, std::uint64_t seed);

  std::size_t stride() const noexcept { return encoder_config.backbone.stride(); }
  std::size_t num_anchors_per_cell() const noexcept { return config.aspect_ratios.size(); }

  NamedParams parameters();
  /// Zeroes every parameter gradient.
  void zero_grad();

  /// Proposals for a (possibly augmented) feature map of an image of the
  /// given size, best first.
  std::vector<Proposal> propose(const FeatureMap& fm, std::size_t image_h, std::size_t image_w,
                                std::size_t top_n) const;

  /// Forward + backward on one image. Gradients are accumulated scaled by
  /// `weight`; `augmentation` is a pooled channel vector added to the V^a
  /// output, or empty.
  LossBreakdown accumulate_gradients(const Image& image, const std::vector<Annotation>& gts,
                                     std::span<const Real> augmentation, Rng& rng, Real weight);

  /// Logits for one region feature under the configured classifier.
  std::vector<Real> logits(std::span<const Real> region_feature) const;

  void save(const std::filesystem::path& archive_path) const;
  static DetectionModel load(const std::filesystem::path& archive_path);
};

/// Anchors for an h x w feature grid, index (y * w + x) * ratios + a.
std::vector<Box> make_anchors(std::size_t grid_h, std::size_t grid_w, std::size_t stride,
                              const DetectorConfig& cfg);

/// Top-`top_n` proposals after proposal NMS.
std::vector<Proposal> propose_regions(const FeatureMap& fm, const DetectionModel& model, std::size_t image_h,
                                      std::size_t image_w, std::size_t top_n);

/// Bilinear ROI-Align to out x out x C, one sample at each bin centre.
/// Box coordinates are image pixels. Throws InvalidInput for boxes under
/// 1 px^2.
Tensor3 roi_align(const FeatureMap& fm, const Box& box, std::size_t stride, std::size_t out);
/// Scatters `grad` (out x out x C) back onto `grad_fm`.
void roi_align_backward(const Tensor3& grad, const Box& box, std::size_t stride, FeatureMap& grad_fm);

/// V^b applied to the ROI-Aligned crop of each box.
std::vector<Embedding> roi_features(const FeatureMap& fm, const std::vector<Box>& boxes,
                                    const Projector& projector, std::size_t stride,
                                    std::size_t roi_size = 7);

/// Inference without augmentation. Keeps regions whose argmax is not the
/// background, applies per-class NMS and the strict score threshold.
std::vector<Detection> detect(const Image& image, const DetectionModel& model, Real score_threshold,
                              Real nms_iou);
std::vector<Detection> detect(const Image& image, const DetectionModel& model);

}  // namespace semaug
