#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semaug/embedding.hpp"

namespace semaug {

/// Ordered, duplicate-free list of lowercase words or phrases.
struct WordList {
  std::vector<std::string> words;
  std::string provenance;

  std::size_t size() const noexcept { return words.size(); }
  bool contains(std::string_view w) const;
};

/// Lowercases, trims, drops empty entries and duplicates (first occurrence
/// wins).
WordList make_wordlist(const std::vector<std::string>& raw, std::string provenance);

/// One entry per line; blank lines ignored. Throws IoError if unreadable.
WordList load_wordlist(const std::filesystem::path& path);
void save_wordlist(const std::filesystem::path& path, const WordList& words);

/// Keeps words whose similarity to the anchor is >= threshold.
WordList prune_by_similarity(const WordList& words, std::string_view anchor, Real threshold,
                             const EncoderBundle& bundle);
/// Same rule with externally supplied scores (word -> similarity to anchor).
/// Words missing from `scores` are dropped.
WordList prune_by_similarity(const WordList& words,
                             const std::function<std::optional<Real>(const std::string&)>& score,
                             Real threshold);

using ScoreTable = std::unordered_map<std::string, Real>;

/// Two-column text table: the last whitespace- or comma-separated field is the
/// number, everything before it the (possibly multi-word) key. Lines starting
/// with '#' are comments. Keys are lowercased.
ScoreTable load_score_table(const std::filesystem::path& path);

/// Keeps words with rank <= top_k; words absent from `ranks` are dropped.
WordList prune_by_frequency(const WordList& words, const ScoreTable& ranks, std::size_t top_k);

struct MergeSpec {
  std::map<std::string, std::string> replace_map;
  std::set<std::string> drop_set;
  /// Words appended after merging (editorial additions).
  std::vector<std::string> add;

  /// Throws ConfigError when a canonical word is also dropped.
  void validate() const;
  static MergeSpec load(const std::filesystem::path& path);
};

WordList merge_synonyms(const WordList& words, const MergeSpec& spec);

struct TargetPrompt {
  std::size_t id = 0;  // 1..M
  std::string text;
  std::string weather;
  std::string time;

  friend bool operator==(const TargetPrompt&, const TargetPrompt&) = default;
};

struct PromptSet {
  std::string source_prompt;
  std::vector<TargetPrompt> targets;

  std::size_t size() const noexcept { return targets.size(); }
  void validate() const;

  void save(const std::filesystem::path& path) const;
  static PromptSet load(const std::filesystem::path& path);

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

inline constexpr std::string_view kTargetTemplate = "an image taken on a {weather} {time}";
inline constexpr std::string_view kSourcePrompt = "an image taken during the day";
inline constexpr std::string_view kClassTemplate = "a photo of a {category name}";

/// Weather-major cross product of the two lists substituted into `templ`,
/// which must contain "{weather}" and "{time}" exactly once each.
PromptSet generate_prompts(const WordList& weathers, const WordList& times, std::string_view templ,
                           std::string_view source_prompt);

/// Replaces the single "{...}" placeholder in `templ` with `value`.
std::string fill_template(std::string_view templ, std::string_view value);

}  // namespace semaug
