#include <gtest/gtest.h>

#include <fstream>

#include "semaug/ablation.hpp"
#include "semaug/errors.hpp"
#include "semaug/evaluation.hpp"
#include "test_util.hpp"
#include "toy_bundle.hpp"

using namespace semaug;

TEST(AblationGrid, ParsesTogglesAndDefaults) {
  const auto rows = parse_ablation_grid(R"([
    {"name": "full"},
    {"init": "random", "loss": "linear", "pool": "average", "aug": "off-concept"},
    {"aug": "none"}
  ])");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].name, "full");
  EXPECT_TRUE(rows[0].pretrained);
  EXPECT_EQ(rows[0].classifier, ClassifierMode::text);
  EXPECT_EQ(rows[0].pooling, PoolingMode::attention);
  EXPECT_EQ(rows[0].aug, AugArm::semantic);
  EXPECT_FALSE(rows[1].pretrained);
  EXPECT_EQ(rows[1].classifier, ClassifierMode::linear);
  EXPECT_EQ(rows[1].pooling, PoolingMode::average);
  EXPECT_EQ(rows[1].aug, AugArm::off_concept);
  EXPECT_EQ(rows[1].name, "random-init/linear/average/off-concept");
  EXPECT_EQ(rows[2].name, describe(rows[2]));
  EXPECT_EQ(parse_ablation_grid(R"({"rows": [{"aug": "random"}]})")[0].aug, AugArm::random);
}

TEST(AblationGrid, RejectsUnknownTogglesAndValues) {
  EXPECT_THROW(parse_ablation_grid(R"([{"augment": "sem"}])"), ConfigError);
  EXPECT_THROW(parse_ablation_grid(R"([{"aug": "sometimes"}])"), ConfigError);
  EXPECT_THROW(parse_ablation_grid(R"([{"pool": 3}])"), ConfigError);
  EXPECT_THROW(parse_ablation_grid(R"([])"), ConfigError);
  EXPECT_THROW(parse_ablation_grid("not json"), ConfigError);
  EXPECT_THROW(parse_ablation_grid(R"([1, 2])"), ConfigError);

  const auto path = test::temp_dir("ablation") / "grid.json";
  {
    std::ofstream f(path);
    f << R"([{"init": "pretrained"}])";
  }
  EXPECT_EQ(load_ablation_grid(path).size(), 1u);
}

TEST(Ablation, MedianAndOffConceptPrompts) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_EQ(median({7}), 7);
  EXPECT_THROW(median({}), InvalidInput);

  const PromptSet p = off_concept_prompts();
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p.source_prompt, kSourcePrompt);
  EXPECT_EQ(p.targets[0].text, "an image of desert");
  EXPECT_EQ(p.targets[3].id, 4u);
  for (const auto& t : p.targets) EXPECT_EQ(t.text.find("weather"), std::string::npos);
}

TEST(Ablation, SingleRowMatchesDirectTrainAndEval) {
  AblationInputs in;
  in.train = generate_synthetic_domain(DomainSpec::preset("clear"), 6, 64, toy_classes(), 5);
  for (const char* d : {"clear", "fog"})
    in.eval.push_back(generate_synthetic_domain(DomainSpec::preset(d), 4, 64, toy_classes(), 6));
  in.pretrained = test::small_pretrained_bundle();
  in.prompts = off_concept_prompts();
  in.train_config = TrainConfig::toy();
  in.train_config.iterations = 6;
  in.train_config.batch_size = 2;
  in.seeds = {3, 4};

  AblationRow row;
  row.aug = AugArm::none;
  row.name = "none";
  std::vector<std::string> messages;
  const AblationReport rep = run_ablation({row}, in, [&](const std::string& m) { messages.push_back(m); });
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.domains, (std::vector<std::string>{"clear", "fog"}));
  EXPECT_FALSE(messages.empty());

  const auto bank = build_class_bank(in.train.class_names, kClassTemplate, in.pretrained);
  for (std::size_t si = 0; si < in.seeds.size(); ++si) {
    TrainConfig cfg = in.train_config;
    cfg.seed = in.seeds[si];
    cfg.theta = 0;
    const auto trained = train_detector(in.train, in.pretrained, {}, bank, cfg);
    const Real clear = evaluate_map(trained.model, in.eval[0]).map;
    const Real fog = evaluate_map(trained.model, in.eval[1]).map;
    EXPECT_EQ(rep.rows[0].per_seed.at("clear")[si], clear);
    EXPECT_EQ(rep.rows[0].per_seed.at("fog")[si], fog);
    EXPECT_EQ(rep.rows[0].target_mean_per_seed[si], fog);
  }
  EXPECT_EQ(rep.rows[0].median.at("fog"), median(rep.rows[0].per_seed.at("fog")));
  EXPECT_EQ(rep.rows[0].target_median, median(rep.rows[0].target_mean_per_seed));

  const std::string md = rep.markdown();
  EXPECT_NE(md.find("| none | pretrained | text | attention | none |"), std::string::npos);
  const auto json_path = test::temp_dir("ablation") / "report.json";
  rep.save_json(json_path);
  EXPECT_TRUE(std::filesystem::exists(json_path));

  EXPECT_THROW(run_ablation({}, in), ConfigError);
  in.seeds.clear();
  EXPECT_THROW(run_ablation({row}, in), ConfigError);
}
