#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

#include "commands.hpp"
#include "json.hpp"
#include "semaug/ablation.hpp"
#include "semaug/archive.hpp"
#include "semaug/augment.hpp"
#include "semaug/errors.hpp"
#include "semaug/evaluation.hpp"
#include "semaug/pca.hpp"
#include "semaug/training.hpp"

namespace semaug::cli {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, PoolingMode> kPooling{{"attention", PoolingMode::attention},
                                                  {"average", PoolingMode::average}};

/// --markdown with no value prints to stdout.
void emit_markdown(const std::string& text, const CLI::Option* opt, const std::string& path) {
  if (opt->count() == 0) return;
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::vector<std::vector<Detection>> detect_all(const DetectionModel& model, const Dataset& ds, bool serial) {
  std::vector<std::vector<Detection>> dets(ds.samples.size());
  const std::size_t n_threads =
      serial ? 1 : std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, ds.samples.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < ds.samples.size(); ++i) dets[i] = detect(ds.samples[i].image, model);
    return dets;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < n_threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < ds.samples.size(); i += n_threads) dets[i] = detect(ds.samples[i].image, model);
    });
  return dets;
}

}  // namespace

void add_pretrain_embed(CLI::App& app, const Globals& g) {
  struct Opts {
    fs::path out, report;
    std::size_t corpus = 2000;
    std::size_t image_size = 64;
    ToyPretrainConfig cfg;
    PoolingMode pooling = PoolingMode::attention;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("pretrain-embed", "Contrastively pretrain the toy image/text encoder");
  cmd->add_option("--corpus-size", o->corpus, "Captioned training images")->check(CLI::Range(2, 1000000));
  cmd->add_option("--image-size", o->image_size, "Image side in pixels")->check(CLI::Range(32, 1024));
  cmd->add_option("--epochs", o->cfg.epochs, "Training epochs");
  cmd->add_option("--batch", o->cfg.batch_size, "Batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o->cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--temperature", o->cfg.temperature, "Softmax temperature")->check(CLI::PositiveNumber);
  cmd->add_option("--embedding-norm", o->cfg.embedding_norm, "Mean image embedding norm after training");
  cmd->add_option("--pooling", o->pooling, "attention or average")->transform(CLI::CheckedTransformer(kPooling));
  cmd->add_option("--report", o->report, "Write losses and held-out alignment as JSON");
  cmd->add_option("--out", o->out, "Encoder archive")->required();
  cmd->callback([o, &g] {
    o->cfg.seed = g.seed;
    BundleConfig arch;
    arch.pooling = o->pooling;
    const auto corpus = generate_caption_corpus(o->corpus, o->image_size, g.seed);
    PretrainReport rep;
    const EncoderBundle bundle = pretrain_toy_embedding(corpus, o->cfg, arch, Vocabulary::toy_default(), &rep);
    bundle.save(o->out);
    const auto held = generate_caption_corpus(300, o->image_size, g.seed + 1);
    const AlignmentStats st = alignment_stats(bundle, held);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "held-out cosine: matched %.4f mismatched %.4f gap %.4f", st.matched_mean,
                  st.mismatched_mean, st.gap());
    log(buf);
    if (!o->report.empty()) {
      nlohmann::json j{{"epoch_loss", rep.epoch_loss},
                       {"matched_mean", st.matched_mean},
                       {"mismatched_mean", st.mismatched_mean},
                       {"gap", st.gap()}};
      write_file(o->report, j.dump(2) + "\n");
    }
  });
}

void add_optimize_aug(CLI::App& app, const Globals& g) {
  struct Opts {
    fs::path images, prompts, encoder, out;
    OptConfig cfg;
    std::optional<PoolingMode> pooling;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("optimize-aug", "Optimise one feature augmentation per target prompt");
  cmd->add_option("--images", o->images, "Source-domain dataset or PNG directory")->required();
  cmd->add_option("--prompts", o->prompts, "Prompt set JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--encoder", o->encoder, "Encoder archive")->required()->check(CLI::ExistingFile);
  cmd->add_option("--iters", o->cfg.iterations, "Adam iterations")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o->cfg.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--crop-size", o->cfg.crop_size, "Crop side fed to the encoder");
  cmd->add_option("--crops", o->cfg.crops_per_image, "Random crops per iteration")->check(CLI::PositiveNumber);
  cmd->add_option("--l1-weight", o->cfg.l1_weight, "Weight of the L1 regulariser");
  cmd->add_option("--pooling", o->pooling, "Override the encoder's pooling")->transform(CLI::CheckedTransformer(kPooling));
  cmd->add_option("--out", o->out, "Augmentation archive")->required();
  cmd->callback([o, &g] {
    o->cfg.seed = g.seed;
    EncoderBundle bundle = EncoderBundle::load(o->encoder);
    if (o->pooling) bundle.projector.mode = *o->pooling;
    const auto images = load_images(o->images);
    const AugmentationSet set = optimize_augmentations(images, PromptSet::load(o->prompts), bundle, o->cfg);
    set.save(o->out);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu augmentations, loss %.4f -> %.4f", set.size(), set.loss_log.front(),
                  set.loss_log.back());
    log(buf);
  });
}

void add_train(CLI::App& app, const Globals& g) {
  struct Opts {
    fs::path data, encoder, aug, config, out, log_path;
    std::string domain = "clear";
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("train", "Train the detector on the source domain");
  cmd->add_option("--data", o->data, "Source dataset (or a gen-data root)")->required();
  cmd->add_option("--domain", o->domain, "Domain to pick from a gen-data root");
  cmd->add_option("--encoder", o->encoder, "Encoder archive")->required()->check(CLI::ExistingFile);
  cmd->add_option("--aug", o->aug, "Augmentation archive; omit to train without")->check(CLI::ExistingFile);
  cmd->add_option("--config", o->config, "Training config JSON over the toy profile")->check(CLI::ExistingFile);
  cmd->add_option("--out", o->out, "Model archive")->required();
  cmd->add_option("--log", o->log_path, "Per-iteration JSONL log");
  cmd->callback([o, &g] {
    TrainConfig cfg = TrainConfig::toy();
    if (!o->config.empty()) cfg = train_config_from_json(o->config, cfg);
    if (g.seed_given() || o->config.empty()) cfg.seed = g.seed;
    AugmentationSet augs;
    if (!o->aug.empty()) {
      augs = AugmentationSet::load(o->aug);
    } else if (cfg.theta > 0) {
      log("no --aug given: training with theta = 0");
      cfg.theta = 0;
    }
    const EncoderBundle bundle = EncoderBundle::load(o->encoder);
    const Dataset ds = load_domain(o->data, o->domain);
    const ClassTextBank bank = build_class_bank(ds.class_names, kClassTemplate, bundle);
    const std::size_t every = std::max<std::size_t>(cfg.iterations / 20, 1);
    const TrainResult res = train_detector(ds, bundle, augs, bank, cfg, [&](const TrainRecord& r) {
      if (r.iteration % every != 0 && r.iteration + 1 != cfg.iterations) return;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "iter %zu lr %.2e loss %.4f (rpn %.4f reg %.4f clip %.4f)", r.iteration, r.lr,
                    r.total, r.loss.rpn, r.loss.reg, r.loss.clip);
      log(buf);
    });
    res.model.save(o->out);
    if (!o->log_path.empty()) res.log.save(o->log_path);
  });
}

void add_eval(CLI::App& app, const Globals& g) {
  struct Opts {
    fs::path model, out;
    std::vector<fs::path> data;
    Real iou = 0.5;
    std::string markdown;
    CLI::Option* markdown_opt = nullptr;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("eval", "Per-domain mAP of a trained detector");
  cmd->add_option("--model", o->model, "Model archive")->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", o->data, "Dataset directory or gen-data root; repeatable")->required();
  cmd->add_option("--iou", o->iou, "IoU a detection must exceed")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--out", o->out, "Report JSON")->required();
  o->markdown_opt = cmd->add_option("--markdown", o->markdown, "Markdown table file (stdout without a value)")
                        ->expected(0, 1);
  cmd->callback([o, &g] {
    const DetectionModel model = DetectionModel::load(o->model);
    EvalReport report;
    report.iou_threshold = o->iou;
    report.class_names = model.bank.class_names;
    for (const auto& dir : o->data)
      for (const auto& ds : load_data_dir(dir)) {
        if (ds.class_names != model.bank.class_names)
          throw InvalidInput("eval: dataset classes differ from the model's in " + dir.string());
        report.domains.push_back(evaluate_detections(detect_all(model, ds, g.deterministic), ds, o->iou));
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%-10s mAP %.4f", report.domains.back().domain.c_str(),
                      report.domains.back().map);
        log(buf);
      }
    report.save_json(o->out);
    emit_markdown(report.markdown(), o->markdown_opt, o->markdown);
  });
}

void add_project(CLI::App& app, const Globals&) {
  struct Opts {
    fs::path encoder, aug, data, out;
    std::size_t per_domain = 200;
    std::string source = "clear";
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("project", "PCA of real and augmented image embeddings");
  cmd->add_option("--encoder", o->encoder, "Encoder archive")->required()->check(CLI::ExistingFile);
  cmd->add_option("--aug", o->aug, "Augmentation archive")->required()->check(CLI::ExistingFile);
  cmd->add_option("--data", o->data, "gen-data root with one directory per domain")->required();
  cmd->add_option("--per-domain", o->per_domain, "Images embedded per domain")->check(CLI::PositiveNumber);
  cmd->add_option("--source", o->source, "Domain the augmentations are applied to");
  cmd->add_option("--out", o->out, "Output directory")->required();
  cmd->callback([o] {
    const EncoderBundle bundle = EncoderBundle::load(o->encoder);
    const AugmentationSet set = AugmentationSet::load(o->aug);
    std::vector<LabeledEmbedding> real, augmented;
    const Dataset* source = nullptr;
    const auto sets = load_data_dir(o->data);
    for (const auto& ds : sets) {
      const std::size_t n = std::min(o->per_domain, ds.samples.size());
      for (std::size_t i = 0; i < n; ++i)
        real.push_back({ds.samples[i].domain, encode_image(ds.samples[i].image, bundle)});
      if (!ds.samples.empty() && ds.samples.front().domain == o->source) source = &ds;
    }
    if (source == nullptr) throw IoError("project: no '" + o->source + "' domain under " + o->data.string());
    const std::size_t n = std::min(o->per_domain, source->samples.size());
    for (std::size_t i = 0; i < n; ++i) {
      const FeatureMap fm = encode_image_features(source->samples[i].image, bundle);
      for (std::size_t j = 0; j < set.size(); ++j) {
        const Tensor3& A = set.augmentations[j].tensor;
        Embedding e = fm.same_shape(A) ? augmented_projection(fm, A, bundle)
                                       : project_features(apply_augmentation(fm, pool_augmentation(A)), bundle);
        augmented.push_back({set.target_prompts[j], std::move(e)});
      }
    }
    fs::create_directories(o->out);
    const ProjectionOutput p = export_projection(real, augmented, o->out);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%zu real, %zu augmented points; explained variance %.4g, %.4g", p.real.size(),
                  p.augmented.size(), p.pca.explained_variance[0], p.pca.explained_variance[1]);
    log(buf);
  });
}

void add_ablate(CLI::App& app, const Globals& g) {
  struct Opts {
    fs::path grid, train, data, encoder, prompts, train_config, out;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::optional<std::size_t> iters;
    std::size_t opt_iters = 1000;
    Real random_sigma = -1;
    std::string markdown;
    CLI::Option* markdown_opt = nullptr;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("ablate", "Train and evaluate every row of an ablation grid");
  cmd->add_option("--grid", o->grid, "Grid JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--train", o->train, "Source training dataset (or gen-data root)")->required();
  cmd->add_option("--data", o->data, "Evaluation gen-data root")->required();
  cmd->add_option("--encoder", o->encoder, "Pretrained encoder archive")->required()->check(CLI::ExistingFile);
  cmd->add_option("--prompts", o->prompts, "Prompt set JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--train-config", o->train_config, "Training config JSON over the toy profile")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seeds", o->seeds, "Comma-separated seeds")->delimiter(',');
  cmd->add_option("--iters", o->iters, "Override training iterations");
  cmd->add_option("--opt-iters", o->opt_iters, "Augmentation optimiser iterations")->check(CLI::PositiveNumber);
  cmd->add_option("--random-sigma", o->random_sigma, "Entry std of the random arm (default: matched)");
  cmd->add_option("--out", o->out, "Report JSON")->required();
  o->markdown_opt = cmd->add_option("--markdown", o->markdown, "Markdown table file (stdout without a value)")
                        ->expected(0, 1);
  cmd->callback([o, &g] {
    AblationInputs in;
    in.train = load_domain(o->train, "clear");
    in.source_domain = in.train.samples.empty() ? "clear" : in.train.samples.front().domain;
    in.eval = load_data_dir(o->data);
    in.pretrained = EncoderBundle::load(o->encoder);
    in.prompts = PromptSet::load(o->prompts);
    in.opt.iterations = o->opt_iters;
    in.opt.seed = g.seed;
    in.train_config = TrainConfig::toy();
    if (!o->train_config.empty()) in.train_config = train_config_from_json(o->train_config, in.train_config);
    if (o->iters) {
      const Real frac = static_cast<Real>(in.train_config.lr_decay_at) / static_cast<Real>(in.train_config.iterations);
      in.train_config.iterations = *o->iters;
      in.train_config.lr_decay_at = static_cast<std::size_t>(frac * static_cast<Real>(*o->iters));
    }
    in.seeds = o->seeds;
    in.random_sigma = o->random_sigma;
    const AblationReport report = run_ablation(load_ablation_grid(o->grid), in, [](const std::string& m) { log(m); });
    report.save_json(o->out);
    emit_markdown(report.markdown(), o->markdown_opt, o->markdown);
  });
}

}  // namespace semaug::cli
