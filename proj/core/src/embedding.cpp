#include "semaug/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "json_io.hpp"
#include "semaug/archive.hpp"
#include "semaug/errors.hpp"
#include "semaug/vecmath.hpp"

namespace semaug {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  tokens_.emplace_back(kUnknown);
  index_.emplace(std::string(kUnknown), 0);
  for (const auto& w : words) {
    if (w.empty() || index_.count(w) > 0) continue;
    index_.emplace(w, tokens_.size());
    tokens_.push_back(w);
  }
}

Vocabulary Vocabulary::toy_default() {
  return Vocabulary({
      // templates
      "a", "an", "the", "photo", "of", "image", "taken", "on", "during", "weather",
      // toy classes
      "circle", "square", "triangle",
      // conditions
      "sunny", "clear", "fog", "rain", "snow", "cloudy", "stormy",
      "day", "evening", "night",
      // off-concept words
      "desert", "ocean", "forest", "mountain",
      // driving-benchmark classes
      "bus", "bike", "car", "motorbike", "person", "rider", "truck",
  });
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? 0 : it->second;
}

std::vector<std::size_t> Vocabulary::tokenize(std::string_view text) const {
  std::vector<std::size_t> ids;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) ids.push_back(id(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isalnum(uc) || ch == '\'' || uc >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

// ---------------------------------------------------------------------------
// Text encoder

ToyTextEncoder::ToyTextEncoder(Vocabulary vocab, std::size_t token_dim, std::size_t embed_dim)
    : table({vocab.size(), token_dim}),
      proj(token_dim, embed_dim),
      vocab_(std::move(vocab)),
      token_dim_(token_dim) {}

void ToyTextEncoder::init(Rng& rng) {
  table.init_normal(rng, 1.0);
  proj.init_normal(rng, 1.0 / std::sqrt(static_cast<Real>(token_dim_)));
}

Embedding ToyTextEncoder::encode(std::string_view prompt, Cache* cache) const {
  if (std::all_of(prompt.begin(), prompt.end(),
                  [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
    throw InvalidInput("encode_text: empty prompt");
  auto tokens = vocab_.tokenize(prompt);
  if (tokens.empty()) throw InvalidInput("encode_text: prompt has no tokens");
  std::vector<Real> mean(token_dim_, 0.0);
  for (std::size_t t : tokens) {
    const Real* row = table.value.data() + t * token_dim_;
    for (std::size_t i = 0; i < token_dim_; ++i) mean[i] += row[i];
  }
  for (Real& v : mean) v /= static_cast<Real>(tokens.size());
  Embedding out = proj.forward(mean);
  if (cache != nullptr) {
    cache->tokens = std::move(tokens);
    cache->mean = std::move(mean);
  }
  return out;
}

void ToyTextEncoder::backward(const Cache& cache, std::span<const Real> grad_embedding) {
  auto gmean = proj.backward(cache.mean, grad_embedding, true);
  const Real inv = 1.0 / static_cast<Real>(cache.tokens.size());
  for (std::size_t t : cache.tokens) {
    Real* row = table.grad.data() + t * token_dim_;
    for (std::size_t i = 0; i < token_dim_; ++i) row[i] += gmean[i] * inv;
  }
}

void ToyTextEncoder::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".table", &table);
  proj.collect(prefix + ".proj", out);
}

// ---------------------------------------------------------------------------
// Image encoder halves

BackboneConfig BackboneConfig::clip_scale() {
  BackboneConfig cfg;
  cfg.conv_channels = {16, 64, 1024};
  return cfg;
}

FeatureExtractor::FeatureExtractor(const BackboneConfig& cfg) : cfg_(cfg) {
  if (cfg.conv_channels.empty()) throw InvalidInput("FeatureExtractor: no conv blocks");
  std::size_t in = cfg.in_channels;
  for (std::size_t out : cfg.conv_channels) {
    blocks.emplace_back(in, out, 3, 2, 1);
    in = out;
  }
}

void FeatureExtractor::init(Rng& rng) {
  for (auto& b : blocks) b.init_he(rng);
}

FeatureMap FeatureExtractor::forward(const Image& image, Cache* cache) const {
  if (image.channels() != cfg_.in_channels)
    throw InvalidInput("encode_image_features: expected " + std::to_string(cfg_.in_channels) +
                       " channels");
  if (image.height() < cfg_.min_input() || image.width() < cfg_.min_input())
    throw InvalidInput("encode_image_features: image smaller than " +
                       std::to_string(cfg_.min_input()) + "x" + std::to_string(cfg_.min_input()));
  if (cache != nullptr) {
    cache->block_inputs.clear();
    cache->block_outputs.clear();
  }
  Tensor3 x = image;
  for (const auto& block : blocks) {
    Tensor3 y = block.forward(x);
    relu_inplace(y);
    if (cache != nullptr) {
      cache->block_inputs.push_back(std::move(x));
      cache->block_outputs.push_back(y);
    }
    x = std::move(y);
  }
  return avg_pool2(x);
}

void FeatureExtractor::backward(const Cache& cache, const FeatureMap& grad_features) {
  Tensor3 g = avg_pool2_backward(cache.block_outputs.back(), grad_features);
  for (std::size_t i = blocks.size(); i-- > 0;) {
    auto& block = blocks[i];
    // Nothing upstream of a frozen block needs gradients once every block
    // below it is frozen too.
    bool rest_frozen = true;
    for (std::size_t j = 0; j <= i; ++j) rest_frozen = rest_frozen && blocks[j].weight.frozen;
    if (rest_frozen) return;
    relu_backward(cache.block_outputs[i], g);
    g = block.backward(cache.block_inputs[i], g, i > 0);
  }
}

void FeatureExtractor::collect(const std::string& prefix, NamedParams& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

Projector::Projector(std::size_t channels, std::size_t embed_dim, PoolingMode mode_)
    : mode(mode_), attention(channels, channels), proj(channels, embed_dim) {}

void Projector::init(Rng& rng) {
  attention.init_normal(rng, 1.0 / std::sqrt(static_cast<Real>(channels())));
  proj.init_normal(rng, 1.0 / std::sqrt(static_cast<Real>(channels())));
}

std::vector<Real> Projector::pool(const FeatureMap& fm, Cache* cache) const {
  if (fm.channels() != channels())
    throw InvalidInput("project_features: feature map has " + std::to_string(fm.channels()) +
                       " channels, projector expects " + std::to_string(channels()));
  if (mode == PoolingMode::attention)
    return attention.forward(fm, cache != nullptr ? &cache->attention : nullptr);
  return average_pool(fm);
}

Embedding Projector::forward(const FeatureMap& fm, Cache* cache) const {
  auto pooled = pool(fm, cache);
  Embedding z = proj.forward(pooled);
  if (cache != nullptr) cache->pooled = std::move(pooled);
  return z;
}

FeatureMap Projector::input_grad(const FeatureMap& fm, const Cache& cache,
                                 std::span<const Real> grad_embedding) const {
  std::vector<Real> gpool(channels(), 0.0);
  const Real* w = proj.weight.value.data();
  const std::size_t c = channels();
  for (std::size_t o = 0; o < embed_dim(); ++o)
    for (std::size_t i = 0; i < c; ++i) gpool[i] += grad_embedding[o] * w[o * c + i];
  if (mode == PoolingMode::average) return average_pool_backward(fm, gpool);
  return attention.input_grad(fm, cache.attention, gpool);
}

FeatureMap Projector::backward(const FeatureMap& fm, const Cache& cache,
                               std::span<const Real> grad_embedding, bool accumulate) {
  if (!accumulate) return input_grad(fm, cache, grad_embedding);
  std::vector<Real> gpool(channels(), 0.0);
  const Real* w = proj.weight.value.data();
  const std::size_t c = channels();
  for (std::size_t o = 0; o < embed_dim(); ++o)
    for (std::size_t i = 0; i < c; ++i) gpool[i] += grad_embedding[o] * w[o * c + i];
  proj.backward(cache.pooled, grad_embedding, false);
  if (mode == PoolingMode::average) return average_pool_backward(fm, gpool);
  return attention.backward(fm, cache.attention, gpool);
}

void Projector::collect(const std::string& prefix, NamedParams& out) {
  attention.collect(prefix + ".attn", out);
  proj.collect(prefix + ".proj", out);
}

// ---------------------------------------------------------------------------
// Bundle

EncoderBundle EncoderBundle::initialize(const BundleConfig& config, const Vocabulary& vocab,
                                        std::uint64_t seed) {
  EncoderBundle b;
  b.config = config;
  b.seed = seed;
  b.text = ToyTextEncoder(vocab, config.token_dim, config.embed_dim);
  b.features = FeatureExtractor(config.backbone);
  b.projector = Projector(config.backbone.out_channels(), config.embed_dim, config.pooling);
  Rng rng(seed);
  b.text.init(rng);
  b.features.init(rng);
  b.projector.init(rng);
  b.projector.proj.init_normal(rng, config.projector_init_std);
  return b;
}

NamedParams EncoderBundle::parameters() {
  NamedParams out;
  text.collect("text", out);
  features.collect("image.features", out);
  projector.collect("image.projector", out);
  return out;
}

NamedParams EncoderBundle::image_parameters() {
  NamedParams out;
  features.collect("image.features", out);
  projector.collect("image.projector", out);
  return out;
}

namespace {
const char* pooling_name(PoolingMode m) { return m == PoolingMode::attention ? "attention" : "average"; }
PoolingMode pooling_from(const std::string& s) {
  if (s == "attention") return PoolingMode::attention;
  if (s == "average") return PoolingMode::average;
  throw LoadError("unknown pooling mode '" + s + "'");
}
}  // namespace

void EncoderBundle::save(const std::filesystem::path& archive_path) const {
  auto& self = const_cast<EncoderBundle&>(*this);
  TensorArchive archive;
  for (auto& [name, p] : self.parameters()) archive.add(name, p->shape, p->value);
  archive.save(archive_path);

  nlohmann::json meta;
  meta["format"] = "semaug-encoder";
  meta["seed"] = seed;
  meta["architecture"] = {
      {"in_channels", config.backbone.in_channels},
      {"conv_channels", config.backbone.conv_channels},
      {"embed_dim", config.embed_dim},
      {"token_dim", config.token_dim},
      {"pooling", pooling_name(config.pooling)},
      {"projector_init_std", config.projector_init_std},
      {"stride", config.backbone.stride()},
  };
  meta["vocabulary"] = text.vocabulary().tokens();
  detail::write_json(detail::sidecar_path(archive_path), meta);
}

EncoderBundle EncoderBundle::load(const std::filesystem::path& archive_path) {
  const auto meta = detail::read_json(detail::sidecar_path(archive_path));
  const auto archive = TensorArchive::load(archive_path);
  BundleConfig cfg;
  try {
    const auto& a = meta.at("architecture");
    cfg.backbone.in_channels = a.at("in_channels").get<std::size_t>();
    cfg.backbone.conv_channels = a.at("conv_channels").get<std::vector<std::size_t>>();
    cfg.embed_dim = a.at("embed_dim").get<std::size_t>();
    cfg.token_dim = a.at("token_dim").get<std::size_t>();
    cfg.pooling = pooling_from(a.at("pooling").get<std::string>());
    cfg.projector_init_std = a.at("projector_init_std").get<Real>();
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError("encoder sidecar: " + std::string(ex.what()));
  }
  auto words = meta.at("vocabulary").get<std::vector<std::string>>();
  if (!words.empty() && words.front() == Vocabulary::kUnknown) words.erase(words.begin());
  EncoderBundle b = initialize(cfg, Vocabulary(words), meta.at("seed").get<std::uint64_t>());
  for (auto& [name, p] : b.parameters()) {
    const auto& e = archive.get(name);
    if (e.shape != p->shape) throw LoadError("encoder archive: shape mismatch for '" + name + "'");
    std::copy(e.data.begin(), e.data.end(), p->value.begin());
  }
  return b;
}

Embedding encode_text(std::string_view prompt, const EncoderBundle& bundle) {
  return bundle.text.encode(prompt);
}

FeatureMap encode_image_features(const Image& image, const EncoderBundle& bundle) {
  return bundle.features.forward(image);
}

Embedding project_features(const FeatureMap& fm, const EncoderBundle& bundle) {
  return bundle.projector.forward(fm);
}

Embedding encode_image(const Image& image, const EncoderBundle& bundle) {
  return project_features(encode_image_features(image, bundle), bundle);
}

EncoderBundle load_pretrained_checkpoint(const std::filesystem::path& path) {
  throw ConfigError("loading external pretrained checkpoints is not supported ('" +
                    path.string() + "'); use pretrain-embed to build a toy encoder");
}

// ---------------------------------------------------------------------------
// Contrastive pretraining

namespace {

std::vector<Real> normalized(const std::vector<Real>& v, Real& norm) {
  norm = std::max(l2_norm(v), Real{1e-12});
  std::vector<Real> r(v);
  for (Real& x : r) x /= norm;
  return r;
}

std::vector<Real> normalize_backward(const std::vector<Real>& unit, Real norm,
                                     const std::vector<Real>& grad_unit) {
  const Real d = dot(unit, grad_unit);
  std::vector<Real> g(unit.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (grad_unit[i] - unit[i] * d) / norm;
  return g;
}

}  // namespace

EncoderBundle pretrain_toy_embedding(const std::vector<CaptionedImage>& dataset,
                                     const ToyPretrainConfig& cfg, const BundleConfig& arch,
                                     const Vocabulary& vocab, PretrainReport* report) {
  if (dataset.empty()) throw InvalidInput("pretrain_toy_embedding: empty dataset");
  if (cfg.embedding_norm < 0) throw InvalidInput("pretrain_toy_embedding: embedding_norm must be >= 0");
  if (cfg.batch_size == 0 || cfg.learning_rate <= 0 || cfg.temperature <= 0)
    throw InvalidInput("pretrain_toy_embedding: batch_size, learning_rate and temperature must be positive");

  EncoderBundle bundle = EncoderBundle::initialize(arch, vocab, cfg.seed);
  if (cfg.epochs == 0) return bundle;

  auto named = bundle.parameters();
  std::vector<Param*> params;
  for (auto& [_, p] : named) params.push_back(p);
  Adam opt(cfg.learning_rate);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const Real inv_t = 1.0 / cfg.temperature;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Real epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);
      if (b < 2) continue;
      for (Param* p : params) p->zero_grad();

      std::vector<FeatureExtractor::Cache> fcache(b);
      std::vector<FeatureMap> fms(b);
      std::vector<Projector::Cache> pcache(b);
      std::vector<ToyTextEncoder::Cache> tcache(b);
      std::vector<std::vector<Real>> zi(b), ti(b);
      std::vector<Real> zn(b), tn(b);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& sample = dataset[order[start + k]];
        fms[k] = bundle.features.forward(sample.image, &fcache[k]);
        zi[k] = normalized(bundle.projector.forward(fms[k], &pcache[k]), zn[k]);
        ti[k] = normalized(bundle.text.encode(sample.caption, &tcache[k]), tn[k]);
      }

      // Identical captions inside a batch are all treated as positives.
      std::vector<std::vector<Real>> target(b, std::vector<Real>(b, 0.0));
      for (std::size_t i = 0; i < b; ++i) {
        std::size_t same = 0;
        for (std::size_t j = 0; j < b; ++j)
          if (dataset[order[start + i]].caption == dataset[order[start + j]].caption) ++same;
        for (std::size_t j = 0; j < b; ++j)
          if (dataset[order[start + i]].caption == dataset[order[start + j]].caption)
            target[i][j] = 1.0 / static_cast<Real>(same);
      }

      std::vector<std::vector<Real>> logits(b, std::vector<Real>(b));
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j) logits[i][j] = dot(zi[i], ti[j]) * inv_t;

      std::vector<std::vector<Real>> gl(b, std::vector<Real>(b, 0.0));
      Real loss = 0;
      const Real w = 0.5 / static_cast<Real>(b);
      for (std::size_t i = 0; i < b; ++i) {  // image -> text
        auto p = softmax(logits[i]);
        for (std::size_t j = 0; j < b; ++j) {
          if (target[i][j] > 0) loss -= w * target[i][j] * std::log(std::max(p[j], Real{1e-300}));
          gl[i][j] += w * (p[j] - target[i][j]);
        }
      }
      for (std::size_t j = 0; j < b; ++j) {  // text -> image
        std::vector<Real> col(b);
        for (std::size_t i = 0; i < b; ++i) col[i] = logits[i][j];
        auto p = softmax(col);
        for (std::size_t i = 0; i < b; ++i) {
          if (target[j][i] > 0) loss -= w * target[j][i] * std::log(std::max(p[i], Real{1e-300}));
          gl[i][j] += w * (p[i] - target[j][i]);
        }
      }
      epoch_loss += loss;
      ++batches;

      const std::size_t d = bundle.embed_dim();
      for (std::size_t k = 0; k < b; ++k) {
        std::vector<Real> gz(d, 0.0), gt(d, 0.0);
        for (std::size_t j = 0; j < b; ++j)
          for (std::size_t e = 0; e < d; ++e) gz[e] += gl[k][j] * ti[j][e] * inv_t;
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t e = 0; e < d; ++e) gt[e] += gl[i][k] * zi[i][e] * inv_t;
        auto gz_raw = normalize_backward(zi[k], zn[k], gz);
        auto gt_raw = normalize_backward(ti[k], tn[k], gt);
        bundle.text.backward(tcache[k], gt_raw);
        FeatureMap gfm = bundle.projector.backward(fms[k], pcache[k], gz_raw, true);
        bundle.features.backward(fcache[k], gfm);
      }
      opt.step(params);
    }
    if (report != nullptr) report->epoch_loss.push_back(batches ? epoch_loss / batches : 0.0);
  }

  if (cfg.embedding_norm > 0) {
    Real mean_norm = 0;
    for (const auto& sample : dataset) mean_norm += l2_norm(encode_image(sample.image, bundle));
    mean_norm /= static_cast<Real>(dataset.size());
    if (mean_norm > 0) {
      const Real f = cfg.embedding_norm / mean_norm;
      for (Real& v : bundle.projector.proj.weight.value) v *= f;
      for (Real& v : bundle.projector.proj.bias.value) v *= f;
    }
  }
  return bundle;
}

AlignmentStats alignment_stats(const EncoderBundle& bundle, const std::vector<CaptionedImage>& data) {
  if (data.size() < 2) throw InvalidInput("alignment_stats: need at least two pairs");
  std::vector<Embedding> z, t;
  for (const auto& s : data) {
    z.push_back(encode_image(s.image, bundle));
    t.push_back(encode_text(s.caption, bundle));
  }
  AlignmentStats st;
  Real mis = 0;
  std::size_t n_mis = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    st.matched_mean += cosine_similarity(z[i], t[i]);
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (i == j || data[i].caption == data[j].caption) continue;
      mis += cosine_similarity(z[i], t[j]);
      ++n_mis;
    }
  }
  st.matched_mean /= static_cast<Real>(data.size());
  st.mismatched_mean = n_mis ? mis / static_cast<Real>(n_mis) : 0.0;
  return st;
}

}  // namespace semaug
