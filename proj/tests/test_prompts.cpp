#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "semaug/errors.hpp"
#include "semaug/prompts.hpp"
#include "semaug/vecmath.hpp"
#include "test_util.hpp"

using namespace semaug;

namespace {

const std::filesystem::path kCuration = std::filesystem::path(SEMAUG_FIXTURE_DIR) / "curation";

std::filesystem::path write_text(const std::string& name, const std::string& text) {
  const auto p = test::temp_dir("prompts") / name;
  std::ofstream(p) << text;
  return p;
}

std::set<std::string> as_set(const WordList& w) { return {w.words.begin(), w.words.end()}; }

}  // namespace

TEST(WordLists, LoadDedupsAndLowercases) {
  EXPECT_EQ(load_wordlist(write_text("a.txt", "Snow\nsnow\n\n  fog \n")).words,
            (std::vector<std::string>{"snow", "fog"}));
  EXPECT_EQ(load_wordlist(write_text("empty.txt", "")).size(), 0u);
  EXPECT_EQ(load_wordlist(kCuration / "weather_hyponyms.txt").size(), 175u);
  EXPECT_THROW(load_wordlist(kCuration / "missing.txt"), IoError);
}

TEST(SimilarityPruning, ScoreFunctionRule) {
  const WordList w = make_wordlist({"a", "b", "c", "d"}, "t");
  const std::map<std::string, Real> s{{"a", 0.5}, {"b", 0.4999}, {"c", 0.9}};
  auto score = [&](const std::string& x) -> std::optional<Real> {
    auto it = s.find(x);
    return it == s.end() ? std::nullopt : std::optional<Real>(it->second);
  };
  EXPECT_EQ(prune_by_similarity(w, score, 0.5).words, (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(prune_by_similarity(w, score, -1.0).words, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(prune_by_similarity(w, score, 1.5), InvalidInput);
}

TEST(SimilarityPruning, HandSetEncoderAgainstBruteForce) {
  // Five words with a hand-set token table and an identity projection.
  const Vocabulary vocab({"weather", "snow", "fog", "table", "chair"});
  BundleConfig cfg;
  cfg.embed_dim = 3;
  cfg.token_dim = 3;
  EncoderBundle b = EncoderBundle::initialize(cfg, vocab, 1);
  const std::vector<std::vector<Real>> rows{
      {0, 0, 1}, {1, 0, 0}, {1, 0.2, 0}, {0.9, 0.1, 0.1}, {0.1, 1, 0}, {0, 1, 0.2}};
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < 3; ++k) b.text.table.value[r * 3 + k] = rows[r][k];
  for (std::size_t i = 0; i < 9; ++i) b.text.proj.weight.value[i] = (i % 4 == 0) ? 1 : 0;
  for (auto& v : b.text.proj.bias.value) v = 0;

  const WordList words = make_wordlist({"snow", "weather", "chair", "fog", "table"}, "t");
  std::vector<std::string> expect;
  const auto& anchor = rows[vocab.id("weather")];
  for (const auto& w : words.words) {
    const auto& v = rows[vocab.id(w)];
    const Real c = (v[0] * anchor[0] + v[1] * anchor[1] + v[2] * anchor[2]) /
                   std::sqrt((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) *
                             (anchor[0] * anchor[0] + anchor[1] * anchor[1] + anchor[2] * anchor[2]));
    if (c >= 0.5) expect.push_back(w);
  }
  EXPECT_EQ(prune_by_similarity(words, "weather", 0.5, b).words, expect);
  EXPECT_EQ(expect, (std::vector<std::string>{"snow", "weather", "fog"}));
  EXPECT_EQ(prune_by_similarity(words, "weather", -1.0, b).words, words.words);
  // Monotone in the threshold.
  for (Real t1 : {-0.5, 0.0, 0.3, 0.6})
    for (Real t2 : {-0.5, 0.0, 0.3, 0.6})
      if (t1 <= t2) {
        const auto lo = as_set(prune_by_similarity(words, "weather", t1, b));
        for (const auto& w : prune_by_similarity(words, "weather", t2, b).words) EXPECT_TRUE(lo.contains(w));
      }
}

TEST(FrequencyPruning, Rule) {
  const ScoreTable ranks{{"a", 1}, {"b", 20000}, {"c", 5}};
  EXPECT_EQ(prune_by_frequency(make_wordlist({"a", "b", "c", "z"}, "t"), ranks, 10000).words,
            (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(prune_by_frequency(make_wordlist({"a", "c"}, "t"), ScoreTable{{"a", 1}, {"c", 2}}, 2).size(), 2u);
  EXPECT_THROW(prune_by_frequency(make_wordlist({"a"}, "t"), ranks, 0), InvalidInput);
}

TEST(ScoreTable, ParsesMultiWordKeysAndRejectsGarbage) {
  const auto t = load_score_table(write_text("s.tsv", "# comment\nCurrent of air\t0.33\nfog,0.9\n"));
  EXPECT_DOUBLE_EQ(t.at("current of air"), 0.33);
  EXPECT_DOUBLE_EQ(t.at("fog"), 0.9);
  EXPECT_THROW(load_score_table(write_text("bad.tsv", "fog notanumber\n")), LoadError);
}

TEST(Merge, ReplaceDropAndAdd) {
  MergeSpec spec;
  spec.replace_map = {{"rainfall", "rain"}};
  EXPECT_EQ(merge_synonyms(make_wordlist({"rainfall", "rain"}, "t"), spec).words, (std::vector<std::string>{"rain"}));
  spec = {};
  spec.drop_set = {"blast"};
  EXPECT_EQ(merge_synonyms(make_wordlist({"blast", "fog"}, "t"), spec).words, (std::vector<std::string>{"fog"}));
  const WordList w = make_wordlist({"x", "y"}, "t");
  EXPECT_EQ(merge_synonyms(w, MergeSpec{}).words, w.words);
  spec = {};
  spec.replace_map = {{"gust", "stormy"}};
  spec.drop_set = {"stormy"};
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(MergeSpec::load(write_text("m.json", "{\"replace\": 3}")), ConfigError);
}

TEST(Merge, OutputAvoidsReplacedAndDroppedWords) {
  const MergeSpec spec = MergeSpec::load(kCuration / "merge_spec.json");
  const WordList out = merge_synonyms(load_wordlist(kCuration / "pruned_wordlist.txt"), spec);
  for (const auto& w : out.words) {
    EXPECT_FALSE(spec.drop_set.contains(w)) << w;
    const auto it = spec.replace_map.find(w);
    EXPECT_TRUE(it == spec.replace_map.end() || it->second == w) << w;
  }
}

TEST(Pipeline, FixturesReproducePinnedLists) {
  const WordList hyponyms = load_wordlist(kCuration / "weather_hyponyms.txt");
  const ScoreTable sims = load_score_table(kCuration / "similarity_scores.tsv");
  const WordList kept = prune_by_similarity(
      hyponyms,
      [&](const std::string& w) -> std::optional<Real> {
        auto it = sims.find(w);
        return it == sims.end() ? std::nullopt : std::optional<Real>(it->second);
      },
      0.5);
  const WordList pruned = prune_by_frequency(kept, load_score_table(kCuration / "frequency_ranks.tsv"), 10000);
  EXPECT_EQ(pruned.words, load_wordlist(kCuration / "pruned_wordlist.txt").words);
  EXPECT_EQ(pruned.size(), 24u);
  const WordList merged = merge_synonyms(pruned, MergeSpec::load(kCuration / "merge_spec.json"));
  EXPECT_EQ(as_set(merged), (std::set<std::string>{"snow", "fog", "cloudy", "rain", "stormy"}));
  EXPECT_EQ(as_set(merged), as_set(load_wordlist(kCuration / "final_weathers.txt")));
  // Idempotent on fixed inputs.
  EXPECT_EQ(merge_synonyms(pruned, MergeSpec::load(kCuration / "merge_spec.json")).words, merged.words);
}

TEST(Prompts, TemplateCrossProduct) {
  const WordList weathers = load_wordlist(kCuration / "final_weathers.txt");
  const WordList times = load_wordlist(kCuration / "times.txt");
  const PromptSet p = generate_prompts(weathers, times, kTargetTemplate, kSourcePrompt);
  ASSERT_EQ(p.size(), 15u);
  EXPECT_EQ(p.source_prompt, "an image taken during the day");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& t = p.targets[i];
    EXPECT_EQ(t.id, i + 1);
    EXPECT_EQ(t.weather, weathers.words[i / 3]);
    EXPECT_EQ(t.time, times.words[i % 3]);
    EXPECT_EQ(t.text, "an image taken on a " + t.weather + " " + t.time);
  }
  const PromptSet one = generate_prompts(make_wordlist({"rain"}, "t"), make_wordlist({"night"}, "t"),
                                         kTargetTemplate, kSourcePrompt);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.targets[0].text, "an image taken on a rain night");
  EXPECT_THROW(generate_prompts(weathers, times, "an image of {weather}", kSourcePrompt), InvalidInput);
  EXPECT_THROW(generate_prompts(weathers, times, "{weather} {weather} {time}", kSourcePrompt), InvalidInput);
  EXPECT_EQ(fill_template(kClassTemplate, "circle"), "a photo of a circle");
  EXPECT_THROW(fill_template("no placeholder", "x"), InvalidInput);
}

TEST(Prompts, SaveLoadAndValidate) {
  const PromptSet p = generate_prompts(make_wordlist({"fog", "snow"}, "t"), make_wordlist({"day"}, "t"),
                                       kTargetTemplate, kSourcePrompt);
  const auto path = test::temp_dir("prompts") / "p.json";
  p.save(path);
  EXPECT_EQ(PromptSet::load(path), p);
  PromptSet bad = p;
  bad.targets[1].id = 1;
  EXPECT_THROW(bad.validate(), InvalidInput);
  bad = p;
  bad.targets[0].text = p.source_prompt;
  EXPECT_THROW(bad.validate(), InvalidInput);
  EXPECT_THROW(PromptSet::load(write_text("bad.json", "[1,2]")), LoadError);
}
