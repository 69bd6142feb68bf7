#include "semaug/augment.hpp"

#include <cmath>
#include <numeric>

#include "json_io.hpp"
#include "semaug/archive.hpp"
#include "semaug/data.hpp"
#include "semaug/errors.hpp"
#include "semaug/vecmath.hpp"

namespace semaug {

Embedding embedding_shift(const Embedding& q_s, const Embedding& q_t) {
  if (q_s.size() != q_t.size()) throw InvalidInput("embedding_shift: length mismatch");
  Embedding d = sub(q_t, q_s);
  const Real n = l2_norm(d);
  if (!(n >= 1e-12)) throw DegenerateShift("embedding_shift: target equals source embedding");
  for (Real& v : d) v /= n;
  return d;
}

Embedding target_embedding(const Embedding& z, const Embedding& shift) {
  if (z.size() != shift.size()) throw InvalidInput("target_embedding: length mismatch");
  return add(z, shift);
}

Embedding augmented_projection(const FeatureMap& crop_features, const Tensor3& A,
                               const EncoderBundle& bundle) {
  if (!crop_features.same_shape(A)) throw InvalidInput("augmented_projection: A_j shape differs from features");
  FeatureMap sum = crop_features;
  sum += A;
  return bundle.projector.forward(sum);
}

Real augmentation_loss(const std::vector<FeatureMap>& crops, const std::vector<Embedding>& z,
                       const std::vector<std::vector<Embedding>>& zstar, const std::vector<Tensor3>& A,
                       const EncoderBundle& bundle, Real l1_weight, std::vector<Tensor3>* grad) {
  if (crops.size() != z.size() || crops.size() != zstar.size())
    throw InvalidInput("augmentation_loss: crops, z and z* counts differ");
  if (l1_weight < 0) throw InvalidInput("augmentation_loss: negative l1_weight");
  if (grad != nullptr) {
    grad->clear();
    for (const auto& a : A) grad->emplace_back(a.height(), a.width(), a.channels());
  }
  const Projector& vb = bundle.projector;
  Real total = 0;
  FeatureMap sum;
  for (std::size_t c = 0; c < crops.size(); ++c) {
    if (zstar[c].size() != A.size()) throw InvalidInput("augmentation_loss: z* row has wrong length");
    for (std::size_t j = 0; j < A.size(); ++j) {
      if (!crops[c].same_shape(A[j])) throw InvalidInput("augmentation_loss: A_j shape differs from features");
      sum = crops[c];
      sum += A[j];
      Projector::Cache cache;
      const Embedding zbar = vb.forward(sum, grad != nullptr ? &cache : nullptr);
      total += cosine_distance(zstar[c][j], zbar);
      Real l1 = 0;
      for (std::size_t d = 0; d < zbar.size(); ++d) l1 += std::abs(zbar[d] - z[c][d]);
      total += l1_weight * l1;
      if (grad == nullptr) continue;

      std::vector<Real> g = cosine_distance_grad_b(zstar[c][j], zbar);
      for (std::size_t d = 0; d < zbar.size(); ++d) {
        const Real r = zbar[d] - z[c][d];
        g[d] += l1_weight * static_cast<Real>((r > 0) - (r < 0));
      }
      (*grad)[j] += vb.input_grad(sum, cache, g);
    }
  }
  return total;
}

void OptConfig::validate() const {
  if (iterations < 1) throw InvalidInput("OptConfig: iterations must be >= 1");
  if (!(learning_rate > 0)) throw InvalidInput("OptConfig: learning_rate must be positive");
  if (!(l1_weight >= 0)) throw InvalidInput("OptConfig: l1_weight must be >= 0");
  if (crops_per_image < 1 || images_per_batch < 1) throw InvalidInput("OptConfig: empty crop batch");
  if (crop_size < 1) throw InvalidInput("OptConfig: crop_size must be positive");
}

std::vector<Tensor3> AugmentationSet::tensors() const {
  std::vector<Tensor3> out;
  out.reserve(augmentations.size());
  for (const auto& a : augmentations) out.push_back(a.tensor);
  return out;
}

void AugmentationSet::save(const std::filesystem::path& archive_path) const {
  TensorArchive ar;
  for (const auto& a : augmentations)
    ar.add("A_" + std::to_string(a.id), {a.tensor.height(), a.tensor.width(), a.tensor.channels()},
           a.tensor.values());
  ar.save(archive_path);

  nlohmann::json j;
  j["format"] = "semaug-augmentations";
  j["kind"] = kind;
  j["source_prompt"] = source_prompt;
  j["source_embedding"] = source_embedding;
  j["augmentations"] = nlohmann::json::array();
  for (std::size_t i = 0; i < augmentations.size(); ++i) {
    nlohmann::json e{{"id", augmentations[i].id}, {"prompt_id", augmentations[i].prompt_id}};
    if (i < target_prompts.size()) e["prompt"] = target_prompts[i];
    if (i < target_embeddings.size()) e["target_embedding"] = target_embeddings[i];
    j["augmentations"].push_back(std::move(e));
  }
  j["config"] = {{"iterations", config.iterations},   {"learning_rate", config.learning_rate},
                 {"crop_size", config.crop_size},     {"crops_per_image", config.crops_per_image},
                 {"images_per_batch", config.images_per_batch}, {"l1_weight", config.l1_weight},
                 {"seed", config.seed}};
  j["loss_log"] = loss_log;
  j["final_loss"] = loss_log.empty() ? nlohmann::json(nullptr) : nlohmann::json(loss_log.back());
  detail::write_json(detail::sidecar_path(archive_path), j);
}

AugmentationSet AugmentationSet::load(const std::filesystem::path& archive_path) {
  const TensorArchive ar = TensorArchive::load(archive_path);
  const auto j = detail::read_json(detail::sidecar_path(archive_path));
  AugmentationSet set;
  try {
    set.kind = j.value("kind", "semantic");
    set.source_prompt = j.value("source_prompt", "");
    set.source_embedding = j.value("source_embedding", Embedding{});
    for (const auto& e : j.at("augmentations")) {
      Augmentation a;
      a.id = e.at("id").get<std::size_t>();
      a.prompt_id = e.value("prompt_id", a.id);
      const ArchiveEntry& entry = ar.get("A_" + std::to_string(a.id));
      if (entry.shape.size() != 3) throw LoadError("augmentation A_" + std::to_string(a.id) + " is not 3-D");
      a.tensor = Tensor3(entry.shape[0], entry.shape[1], entry.shape[2]);
      for (std::size_t i = 0; i < entry.data.size(); ++i) a.tensor.values()[i] = entry.data[i];
      set.augmentations.push_back(std::move(a));
      set.target_prompts.push_back(e.value("prompt", ""));
      if (e.contains("target_embedding")) set.target_embeddings.push_back(e["target_embedding"].get<Embedding>());
    }
    const auto& c = j.at("config");
    set.config.iterations = c.at("iterations").get<std::size_t>();
    set.config.learning_rate = c.at("learning_rate").get<Real>();
    set.config.crop_size = c.at("crop_size").get<std::size_t>();
    set.config.crops_per_image = c.at("crops_per_image").get<std::size_t>();
    set.config.images_per_batch = c.value("images_per_batch", std::size_t{1});
    set.config.l1_weight = c.at("l1_weight").get<Real>();
    set.config.seed = c.at("seed").get<std::uint64_t>();
    set.loss_log = j.value("loss_log", std::vector<Real>{});
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError("malformed augmentation metadata for '" + archive_path.string() + "': " + ex.what());
  }
  return set;
}

std::vector<FeatureMap> crop_features(const Image& image, const EncoderBundle& bundle,
                                      std::size_t crop_size, std::size_t n, Rng& rng) {
  std::vector<FeatureMap> out;
  out.reserve(n);
  for (const Image& crop : random_crops(image, crop_size, n, rng))
    out.push_back(bundle.features.forward(crop));
  return out;
}

AugmentationSet optimize_augmentations(const std::vector<Image>& source_images, const PromptSet& prompts,
                                       const EncoderBundle& bundle, const OptConfig& cfg) {
  cfg.validate();
  if (source_images.empty()) throw InvalidInput("optimize_augmentations: no source images");
  if (prompts.size() == 0) throw InvalidInput("optimize_augmentations: empty prompt set");

  AugmentationSet set;
  set.config = cfg;
  set.source_prompt = prompts.source_prompt;
  set.source_embedding = encode_text(prompts.source_prompt, bundle);
  std::vector<Embedding> shifts;
  for (const auto& t : prompts.targets) {
    Embedding q_t = encode_text(t.text, bundle);
    try {
      shifts.push_back(embedding_shift(set.source_embedding, q_t));
    } catch (const DegenerateShift&) {
      throw DegenerateShift("prompt " + std::to_string(t.id) + " ('" + t.text +
                                "') has the same embedding as the source prompt",
                            t.id);
    }
    set.target_prompts.push_back(t.text);
    set.target_embeddings.push_back(std::move(q_t));
  }

  Rng rng(cfg.seed);
  // Probe the feature-map shape with one crop.
  const FeatureMap probe =
      bundle.features.forward(resize_bilinear(source_images.front(), cfg.crop_size, cfg.crop_size));
  std::vector<Param> params;
  params.reserve(prompts.size());
  for (std::size_t j = 0; j < prompts.size(); ++j)
    params.emplace_back(std::vector<std::size_t>{probe.height(), probe.width(), probe.channels()});
  std::vector<Param*> param_ptrs;
  for (auto& p : params) param_ptrs.push_back(&p);
  Adam adam(cfg.learning_rate);

  auto to_tensor = [&](const Param& p) {
    Tensor3 t(probe.height(), probe.width(), probe.channels());
    std::copy(p.value.begin(), p.value.end(), t.data());
    return t;
  };

  std::uniform_int_distribution<std::size_t> pick(0, source_images.size() - 1);
  std::vector<Tensor3> A(params.size());
  std::vector<Tensor3> grad;
  set.loss_log.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<FeatureMap> crops;
    for (std::size_t b = 0; b < cfg.images_per_batch; ++b) {
      auto fms = crop_features(source_images[pick(rng)], bundle, cfg.crop_size, cfg.crops_per_image, rng);
      for (auto& f : fms) crops.push_back(std::move(f));
    }
    std::vector<Embedding> z;
    std::vector<std::vector<Embedding>> zstar;
    for (const auto& f : crops) {
      z.push_back(bundle.projector.forward(f));
      auto& row = zstar.emplace_back();
      for (const auto& s : shifts) row.push_back(target_embedding(z.back(), s));
    }
    for (std::size_t j = 0; j < params.size(); ++j) A[j] = to_tensor(params[j]);
    const Real loss = augmentation_loss(crops, z, zstar, A, bundle, cfg.l1_weight, &grad);
    if (!std::isfinite(loss)) throw Divergence("optimize_augmentations: non-finite loss", it);
    set.loss_log.push_back(loss);
    for (std::size_t j = 0; j < params.size(); ++j)
      std::copy(grad[j].values().begin(), grad[j].values().end(), params[j].grad.begin());
    adam.step(param_ptrs);
  }

  for (std::size_t j = 0; j < params.size(); ++j)
    set.augmentations.push_back({j + 1, to_tensor(params[j]), prompts.targets[j].id});
  return set;
}

AugmentationSet random_augmentations(std::size_t count, std::size_t height, std::size_t width,
                                     std::size_t channels, Real sigma, std::uint64_t seed) {
  if (count == 0) throw InvalidInput("random_augmentations: count must be >= 1");
  if (!(sigma >= 0)) throw InvalidInput("random_augmentations: sigma must be >= 0");
  AugmentationSet set;
  set.kind = "random";
  set.config.iterations = 0;
  set.config.seed = seed;
  Rng rng(seed);
  std::normal_distribution<Real> normal(0.0, sigma);
  for (std::size_t j = 0; j < count; ++j) {
    Tensor3 t(height, width, channels);
    if (sigma > 0)
      for (Real& v : t.values()) v = normal(rng);
    set.augmentations.push_back({j + 1, std::move(t), j + 1});
    set.target_prompts.push_back("");
  }
  return set;
}

Real entry_stddev(const AugmentationSet& set) {
  Real sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& a : set.augmentations)
    for (Real v : a.tensor.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  if (n == 0) return 0;
  const Real mean = sum / static_cast<Real>(n);
  return std::sqrt(std::max(Real{0}, sq / static_cast<Real>(n) - mean * mean));
}

AlignmentReport evaluate_alignment(const std::vector<FeatureMap>& crops, const AugmentationSet& set,
                                   const EncoderBundle& bundle) {
  if (crops.empty()) throw InvalidInput("evaluate_alignment: no crops");
  const std::size_t M = set.size();
  if (set.target_embeddings.size() != M) throw InvalidInput("evaluate_alignment: set has no target embeddings");
  AlignmentReport r{std::vector<Real>(M, 0.0), std::vector<Real>(M, 0.0)};
  for (std::size_t j = 0; j < M; ++j) {
    const Embedding shift = embedding_shift(set.source_embedding, set.target_embeddings[j]);
    for (const auto& f : crops) {
      const Embedding z = bundle.projector.forward(f);
      const Embedding zs = target_embedding(z, shift);
      r.augmented[j] += cosine_similarity(augmented_projection(f, set.augmentations[j].tensor, bundle), zs);
      r.unaugmented[j] += cosine_similarity(z, zs);
    }
    r.augmented[j] /= static_cast<Real>(crops.size());
    r.unaugmented[j] /= static_cast<Real>(crops.size());
  }
  return r;
}

Real evaluate_loss(const std::vector<FeatureMap>& crops, const AugmentationSet& set,
                   const EncoderBundle& bundle, const std::vector<Tensor3>& A) {
  std::vector<Embedding> shifts;
  for (const auto& q : set.target_embeddings) shifts.push_back(embedding_shift(set.source_embedding, q));
  std::vector<Embedding> z;
  std::vector<std::vector<Embedding>> zstar;
  for (const auto& f : crops) {
    z.push_back(bundle.projector.forward(f));
    auto& row = zstar.emplace_back();
    for (const auto& s : shifts) row.push_back(target_embedding(z.back(), s));
  }
  return augmentation_loss(crops, z, zstar, A, bundle, set.config.l1_weight);
}

std::vector<Real> pool_augmentation(const Tensor3& A) { return average_pool(A); }

FeatureMap apply_augmentation(const FeatureMap& fm, std::span<const Real> pooled) {
  FeatureMap out = fm;
  apply_augmentation_inplace(out, pooled);
  return out;
}

void apply_augmentation_inplace(FeatureMap& fm, std::span<const Real> pooled) {
  if (pooled.size() != fm.channels()) throw InvalidInput("apply_augmentation: channel mismatch");
  const std::size_t c = fm.channels();
  Real* d = fm.data();
  for (std::size_t p = 0; p < fm.height() * fm.width(); ++p)
    for (std::size_t k = 0; k < c; ++k) d[p * c + k] += pooled[k];
}

}  // namespace semaug
