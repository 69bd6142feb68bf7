#include "semaug/training.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "config_io.hpp"
#include "json_io.hpp"
#include "semaug/errors.hpp"

namespace semaug {

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.iterations = 2000;
  c.lr_decay_at = 2000;  // no decay inside the toy schedule
  c.learning_rate = 0.001;
  c.detector.logit_scale = 10;
  return c;
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("train: iterations must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("train: learning_rate must be positive");
  if (!(lr_decay_factor > 0)) throw ConfigError("train: lr_decay_factor must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(theta >= 0 && theta <= 1)) throw ConfigError("train: theta outside [0, 1]");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("train: flip_prob outside [0, 1]");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum outside [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(grad_clip >= 0)) throw ConfigError("train: grad_clip must be >= 0");
  detector.validate();
}

Real TrainConfig::learning_rate_at(std::size_t iteration) const noexcept {
  return iteration >= lr_decay_at ? learning_rate * lr_decay_factor : learning_rate;
}

TrainConfig train_config_from_json(const std::filesystem::path& path, const TrainConfig& base) {
  static const std::set<std::string> known{
      "iterations", "learning_rate", "lr_decay_factor", "lr_decay_at", "batch_size",
      "theta",      "flip_prob",     "momentum",        "weight_decay", "grad_clip",
      "seed",       "pretrained_init", "detector"};
  const auto j = detail::read_json(path);
  if (!j.is_object()) throw ConfigError("train config '" + path.string() + "' is not a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown train config key '" + k + "' in " + path.string());
  TrainConfig c = base;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("iterations", c.iterations);
    get("learning_rate", c.learning_rate);
    get("lr_decay_factor", c.lr_decay_factor);
    get("lr_decay_at", c.lr_decay_at);
    get("batch_size", c.batch_size);
    get("theta", c.theta);
    get("flip_prob", c.flip_prob);
    get("momentum", c.momentum);
    get("weight_decay", c.weight_decay);
    get("grad_clip", c.grad_clip);
    get("seed", c.seed);
    get("pretrained_init", c.pretrained_init);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("train config '" + path.string() + "': " + ex.what());
  }
  if (j.contains("detector")) c.detector = detail::detector_config_from_json(j.at("detector"), c.detector);
  c.validate();
  return c;
}

void save_train_config(const std::filesystem::path& path, const TrainConfig& c) {
  nlohmann::json j{{"iterations", c.iterations},     {"learning_rate", c.learning_rate},
                   {"lr_decay_factor", c.lr_decay_factor}, {"lr_decay_at", c.lr_decay_at},
                   {"batch_size", c.batch_size},     {"theta", c.theta},
                   {"flip_prob", c.flip_prob},       {"momentum", c.momentum},
                   {"weight_decay", c.weight_decay}, {"grad_clip", c.grad_clip},
                   {"seed", c.seed},                 {"pretrained_init", c.pretrained_init},
                   {"detector", detail::detector_config_to_json(c.detector)}};
  detail::write_json(path, j);
}

std::optional<SampledAugmentation> sample_augmentation(const AugmentationSet& set, Real theta, Rng& rng) {
  if (!(theta >= 0 && theta <= 1)) throw InvalidInput("sample_augmentation: theta outside [0, 1]");
  if (theta > 0 && set.size() == 0) throw InvalidInput("sample_augmentation: empty augmentation set");
  if (theta == 0) return std::nullopt;
  if (std::uniform_real_distribution<Real>(0, 1)(rng) >= theta) return std::nullopt;
  const std::size_t j = std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng);
  return SampledAugmentation{set.augmentations[j].id, pool_augmentation(set.augmentations[j].tensor)};
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j{{"iteration", r.iteration}, {"lr", r.lr},
                     {"total", r.total},         {"L_rpn", r.loss.rpn},
                     {"L_reg", r.loss.reg},      {"L_clip_t", r.loss.clip},
                     {"aug_applied", r.aug_applied}};
    j["aug_id"] = r.aug_id ? nlohmann::json(*r.aug_id) : nlohmann::json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

void TrainLog::save(const std::filesystem::path& path) const { write_file(path, to_jsonl()); }

namespace {

Real gradient_norm(const NamedParams& params) {
  Real s = 0;
  for (const auto& [name, p] : params)
    if (!p->frozen)
      for (Real g : p->grad) s += g * g;
  return std::sqrt(s);
}

std::vector<Annotation> flip_annotations(const std::vector<Annotation>& anns, Real width) {
  std::vector<Annotation> out = anns;
  for (auto& a : out) a.box = flip_horizontal(a.box, width);
  return out;
}

}  // namespace

TrainResult train_detector(const Dataset& dataset, const EncoderBundle& bundle,
                           const AugmentationSet& augmentations, const ClassTextBank& bank,
                           const TrainConfig& cfg, const TrainProgress& progress) {
  cfg.validate();
  if (dataset.samples.empty()) throw InvalidInput("train_detector: empty dataset");
  if (cfg.theta > 0 && augmentations.size() == 0)
    throw InvalidInput("train_detector: theta > 0 needs at least one augmentation");
  if (bank.num_classes() != dataset.class_names.size())
    throw InvalidInput("train_detector: class bank and dataset disagree on K");

  TrainResult result{DetectionModel::create(bundle, bank, cfg.detector, cfg.seed ^ 0x5eedULL), {}};
  DetectionModel& model = result.model;
  if (cfg.pretrained_init && !model.features.blocks.empty()) {
    model.features.blocks.front().weight.frozen = true;
    model.features.blocks.front().bias.frozen = true;
  }
  NamedParams named = model.parameters();
  std::vector<Param*> params;
  for (auto& [name, p] : named) params.push_back(p);
  Sgd sgd(cfg.learning_rate, cfg.momentum, cfg.weight_decay);

  // Separate streams so that the augmentation draw never perturbs batch
  // composition, flips or ROI sampling.
  Rng rng(cfg.seed);
  Rng aug_rng(cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::bernoulli_distribution flip(cfg.flip_prob);

  std::size_t bad_streak = 0;
  result.log.records.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Real lr = cfg.learning_rate_at(it);
    sgd.set_learning_rate(lr);
    model.zero_grad();

    const auto aug = sample_augmentation(augmentations, cfg.theta, aug_rng);
    const std::span<const Real> pooled = aug ? std::span<const Real>(aug->pooled) : std::span<const Real>();

    TrainRecord rec;
    rec.iteration = it;
    rec.lr = lr;
    rec.aug_applied = aug.has_value();
    if (aug) rec.aug_id = aug->id;
    const Real w = 1.0 / static_cast<Real>(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const SceneSample& s = dataset.samples[order[cursor++]];
      LossBreakdown l;
      if (cfg.flip_prob > 0 && flip(rng)) {
        l = model.accumulate_gradients(flip_image_horizontal(s.image),
                                       flip_annotations(s.annotations, static_cast<Real>(s.image.width())),
                                       pooled, rng, w);
      } else {
        l = model.accumulate_gradients(s.image, s.annotations, pooled, rng, w);
      }
      rec.loss.rpn += l.rpn * w;
      rec.loss.reg += l.reg * w;
      rec.loss.clip += l.clip * w;
    }
    rec.total = rec.loss.total();

    const bool finite = std::isfinite(rec.total) && std::isfinite(gradient_norm(named));
    if (!finite) {
      if (++bad_streak >= 3)
        throw Divergence("train_detector: non-finite loss for 3 consecutive iterations ending at " +
                             std::to_string(it),
                         it);
    } else {
      bad_streak = 0;
      if (cfg.grad_clip > 0) {
        const Real n = gradient_norm(named);
        if (n > cfg.grad_clip)
          for (Param* p : params)
            for (Real& g : p->grad) g *= cfg.grad_clip / n;
      }
      sgd.step(params);
    }
    model.iteration = it + 1;
    if (progress) progress(rec);
    result.log.records.push_back(std::move(rec));
  }
  return result;
}

}  // namespace semaug
