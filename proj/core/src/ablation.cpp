#include "semaug/ablation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "json_io.hpp"
#include "semaug/archive.hpp"
#include "semaug/errors.hpp"
#include "semaug/evaluation.hpp"

namespace semaug {

namespace {

const char* aug_name(AugArm a) {
  switch (a) {
    case AugArm::semantic: return "sem";
    case AugArm::none: return "none";
    case AugArm::random: return "random";
    case AugArm::off_concept: return "off-concept";
  }
  return "?";
}

}  // namespace

std::string describe(const AblationRow& row) {
  std::string s = row.pretrained ? "pretrained" : "random-init";
  s += row.classifier == ClassifierMode::text ? "/text-loss" : "/linear";
  s += row.pooling == PoolingMode::attention ? "/attention" : "/average";
  s += std::string("/") + aug_name(row.aug);
  return s;
}

std::vector<AblationRow> parse_ablation_grid(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("ablation grid: ") + ex.what());
  }
  const nlohmann::json& rows = j.is_object() && j.contains("rows") ? j.at("rows") : j;
  if (!rows.is_array() || rows.empty()) throw ConfigError("ablation grid: expected a non-empty array of rows");
  static const std::set<std::string> known{"name", "init", "loss", "pool", "aug"};
  std::vector<AblationRow> out;
  for (const auto& r : rows) {
    if (!r.is_object()) throw ConfigError("ablation grid: rows must be objects");
    for (const auto& [k, v] : r.items())
      if (!known.contains(k)) throw ConfigError("ablation grid: unknown toggle '" + k + "'");
    AblationRow row;
    auto str = [&](const char* key, const char* def) {
      if (!r.contains(key)) return std::string(def);
      if (!r.at(key).is_string()) throw ConfigError(std::string("ablation grid: '") + key + "' must be a string");
      return r.at(key).get<std::string>();
    };
    const std::string init = str("init", "pretrained"), loss = str("loss", "text"),
                      pool = str("pool", "attention"), aug = str("aug", "sem");
    if (init == "pretrained") row.pretrained = true;
    else if (init == "random") row.pretrained = false;
    else throw ConfigError("ablation grid: unknown init '" + init + "'");
    if (loss == "text") row.classifier = ClassifierMode::text;
    else if (loss == "linear") row.classifier = ClassifierMode::linear;
    else throw ConfigError("ablation grid: unknown loss '" + loss + "'");
    if (pool == "attention") row.pooling = PoolingMode::attention;
    else if (pool == "average") row.pooling = PoolingMode::average;
    else throw ConfigError("ablation grid: unknown pool '" + pool + "'");
    if (aug == "sem") row.aug = AugArm::semantic;
    else if (aug == "none") row.aug = AugArm::none;
    else if (aug == "random") row.aug = AugArm::random;
    else if (aug == "off-concept") row.aug = AugArm::off_concept;
    else throw ConfigError("ablation grid: unknown aug '" + aug + "'");
    row.name = str("name", "");
    if (row.name.empty()) row.name = describe(row);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<AblationRow> load_ablation_grid(const std::filesystem::path& path) {
  return parse_ablation_grid(read_file(path));
}

PromptSet off_concept_prompts() {
  PromptSet p;
  p.source_prompt = std::string(kSourcePrompt);
  for (const char* w : {"desert", "ocean", "forest", "mountain"})
    p.targets.push_back({p.targets.size() + 1, std::string("an image of ") + w, w, ""});
  return p;
}

Real median(std::vector<Real> v) {
  if (v.empty()) throw InvalidInput("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

AblationReport run_ablation(const std::vector<AblationRow>& grid, const AblationInputs& in,
                            const AblationProgress& progress) {
  if (grid.empty()) throw ConfigError("run_ablation: empty grid");
  if (in.seeds.empty()) throw ConfigError("run_ablation: no seeds");
  if (in.eval.empty()) throw ConfigError("run_ablation: no evaluation domains");
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };

  AblationReport report;
  report.seeds = in.seeds;
  report.source_domain = in.source_domain;
  for (const auto& d : in.eval) report.domains.push_back(d.samples.empty() ? "" : d.samples.front().domain);

  std::vector<Image> source_images;
  for (const auto& s : in.train.samples) source_images.push_back(s.image);
  const ClassTextBank bank = build_class_bank(in.train.class_names, kClassTemplate, in.pretrained);

  std::map<std::string, AugmentationSet> optimized;
  auto optimized_set = [&](PoolingMode pool, bool off_concept, std::uint64_t seed) -> const AugmentationSet& {
    const std::string key = std::to_string(static_cast<int>(pool)) + (off_concept ? "/off/" : "/sem/") +
                            std::to_string(seed);
    auto it = optimized.find(key);
    if (it != optimized.end()) return it->second;
    EncoderBundle b = in.pretrained;
    b.projector.mode = pool;
    OptConfig opt = in.opt;
    opt.seed = seed;
    say("optimizing augmentations " + key);
    return optimized.emplace(key, optimize_augmentations(source_images, off_concept ? off_concept_prompts() : in.prompts,
                                                         b, opt))
        .first->second;
  };

  for (const auto& row : grid) {
    AblationRowResult res;
    res.row = row;
    for (std::size_t si = 0; si < in.seeds.size(); ++si) {
      const std::uint64_t seed = in.seeds[si];
      EncoderBundle image_branch =
          row.pretrained ? in.pretrained
                         : EncoderBundle::initialize(in.pretrained.config, in.pretrained.text.vocabulary(),
                                                     seed ^ 0x1a17ULL);
      image_branch.projector.mode = row.pooling;

      TrainConfig cfg = in.train_config;
      cfg.seed = seed;
      cfg.pretrained_init = row.pretrained;
      cfg.detector.classifier = row.classifier;
      AugmentationSet augs;
      switch (row.aug) {
        case AugArm::semantic: augs = optimized_set(row.pooling, false, seed); break;
        case AugArm::off_concept: augs = optimized_set(row.pooling, true, seed); break;
        case AugArm::random: {
          const AugmentationSet& ref = optimized_set(row.pooling, false, seed);
          const Real sigma = in.random_sigma >= 0 ? in.random_sigma : entry_stddev(ref);
          const Tensor3& shape = ref.augmentations.front().tensor;
          augs = random_augmentations(ref.size(), shape.height(), shape.width(), shape.channels(), sigma,
                                      seed ^ 0x7a11d0ULL);
          break;
        }
        case AugArm::none: cfg.theta = 0; break;
      }
      say("training " + row.name + " seed " + std::to_string(seed));
      const TrainResult trained = train_detector(in.train, image_branch, augs, bank, cfg);

      Real target_sum = 0;
      std::size_t targets = 0;
      for (std::size_t d = 0; d < in.eval.size(); ++d) {
        const Real m = evaluate_map(trained.model, in.eval[d]).map;
        res.per_seed[report.domains[d]].push_back(m);
        if (report.domains[d] != in.source_domain) {
          target_sum += m;
          ++targets;
        }
      }
      res.target_mean_per_seed.push_back(targets > 0 ? target_sum / static_cast<Real>(targets) : 0);
    }
    for (const auto& [domain, values] : res.per_seed) res.median[domain] = median(values);
    res.target_median = median(res.target_mean_per_seed);
    report.rows.push_back(std::move(res));
  }
  return report;
}

void AblationReport::save_json(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["seeds"] = seeds;
  j["domains"] = domains;
  j["source_domain"] = source_domain;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["name"] = r.row.name;
    row["toggles"] = {{"init", r.row.pretrained ? "pretrained" : "random"},
                      {"loss", r.row.classifier == ClassifierMode::text ? "text" : "linear"},
                      {"pool", r.row.pooling == PoolingMode::attention ? "attention" : "average"},
                      {"aug", aug_name(r.row.aug)}};
    row["per_seed"] = r.per_seed;
    row["median"] = r.median;
    row["target_mean_per_seed"] = r.target_mean_per_seed;
    row["target_median"] = r.target_median;
    j["rows"].push_back(std::move(row));
  }
  detail::write_json(path, j);
}

std::string AblationReport::markdown() const {
  std::string out = "| Row | Init | Loss | Pool | Aug |";
  for (const auto& d : domains) out += " " + d + " |";
  out += " Target avg |\n|---|---|---|---|---|";
  for (std::size_t i = 0; i < domains.size(); ++i) out += "---|";
  out += "---|\n";
  char buf[32];
  for (const auto& r : rows) {
    out += "| " + r.row.name + " | " + (r.row.pretrained ? "pretrained" : "random") + " | " +
           (r.row.classifier == ClassifierMode::text ? "text" : "linear") + " | " +
           (r.row.pooling == PoolingMode::attention ? "attention" : "average") + " | " + aug_name(r.row.aug) + " |";
    for (const auto& d : domains) {
      const auto it = r.median.find(d);
      std::snprintf(buf, sizeof(buf), " %.1f |", it == r.median.end() ? 0.0 : 100 * it->second);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), " %.1f |\n", 100 * r.target_median);
    out += buf;
  }
  return out;
}

}  // namespace semaug
