#include "semaug/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>
#include <unordered_set>

#include "json_io.hpp"
#include "semaug/errors.hpp"
#include "semaug/vecmath.hpp"

namespace semaug {

namespace {

std::string normalize(std::string_view s) {
  auto b = s.begin(), e = s.end();
  while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
  std::string out(b, e);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

std::string replace_once(std::string s, std::string_view from, std::string_view to) {
  const auto pos = s.find(from);
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
  return s;
}

}  // namespace

bool WordList::contains(std::string_view w) const {
  return std::find(words.begin(), words.end(), w) != words.end();
}

WordList make_wordlist(const std::vector<std::string>& raw, std::string provenance) {
  WordList out;
  out.provenance = std::move(provenance);
  std::unordered_set<std::string> seen;
  for (const auto& r : raw) {
    std::string w = normalize(r);
    if (w.empty() || !seen.insert(w).second) continue;
    out.words.push_back(std::move(w));
  }
  return out;
}

WordList load_wordlist(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> raw;
  for (std::string line; std::getline(in, line);) raw.push_back(line);
  return make_wordlist(raw, "file:" + path.filename().string());
}

void save_wordlist(const std::filesystem::path& path, const WordList& words) {
  std::string text;
  for (const auto& w : words.words) text += w + "\n";
  write_file(path, text);
}

WordList prune_by_similarity(const WordList& words, std::string_view anchor, Real threshold,
                             const EncoderBundle& bundle) {
  const Embedding a = encode_text(anchor, bundle);
  return prune_by_similarity(
      words, [&](const std::string& w) -> std::optional<Real> {
        return cosine_similarity(encode_text(w, bundle), a);
      },
      threshold);
}

WordList prune_by_similarity(const WordList& words,
                             const std::function<std::optional<Real>(const std::string&)>& score,
                             Real threshold) {
  if (!(threshold >= -1 && threshold <= 1))
    throw InvalidInput("prune_by_similarity: threshold must lie in [-1, 1]");
  WordList out;
  out.provenance = words.provenance + " | similarity>=" + std::to_string(threshold);
  for (const auto& w : words.words) {
    const auto s = score(w);
    if (s && *s >= threshold) out.words.push_back(w);
  }
  return out;
}

ScoreTable load_score_table(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  ScoreTable table;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string t = normalize(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cut = t.find_last_of(" \t,");
    if (cut == std::string::npos)
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": expected '<word> <value>'");
    const std::string key = normalize(std::string_view(t).substr(0, cut));
    const std::string num = t.substr(cut + 1);
    Real v = 0;
    const auto res = std::from_chars(num.data(), num.data() + num.size(), v);
    if (key.empty() || res.ec != std::errc() || res.ptr != num.data() + num.size())
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": bad entry '" + line + "'");
    table.emplace(key, v);
  }
  return table;
}

WordList prune_by_frequency(const WordList& words, const ScoreTable& ranks, std::size_t top_k) {
  if (top_k == 0) throw InvalidInput("prune_by_frequency: top_k must be positive");
  WordList out;
  out.provenance = words.provenance + " | rank<=" + std::to_string(top_k);
  for (const auto& w : words.words) {
    const auto it = ranks.find(w);
    if (it != ranks.end() && it->second <= static_cast<Real>(top_k)) out.words.push_back(w);
  }
  return out;
}

void MergeSpec::validate() const {
  for (const auto& [from, to] : replace_map)
    if (drop_set.contains(to)) throw ConfigError("MergeSpec: canonical word '" + to + "' is also dropped");
}

MergeSpec MergeSpec::load(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  MergeSpec spec;
  try {
    if (j.contains("replace"))
      for (const auto& [k, v] : j.at("replace").items()) spec.replace_map[normalize(k)] = normalize(v.get<std::string>());
    if (j.contains("drop"))
      for (const auto& w : j.at("drop")) spec.drop_set.insert(normalize(w.get<std::string>()));
    if (j.contains("add"))
      for (const auto& w : j.at("add")) spec.add.push_back(normalize(w.get<std::string>()));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("malformed merge spec '" + path.string() + "': " + ex.what());
  }
  spec.validate();
  return spec;
}

WordList merge_synonyms(const WordList& words, const MergeSpec& spec) {
  spec.validate();
  std::vector<std::string> mapped;
  for (const auto& w : words.words) {
    const auto it = spec.replace_map.find(w);
    std::string m = it == spec.replace_map.end() ? w : it->second;
    if (!spec.drop_set.contains(m)) mapped.push_back(std::move(m));
  }
  for (const auto& a : spec.add)
    if (!spec.drop_set.contains(a)) mapped.push_back(a);
  WordList out = make_wordlist(mapped, words.provenance + " | merged");
  return out;
}

void PromptSet::validate() const {
  std::set<std::size_t> ids;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    if (t.id < 1 || t.id > targets.size() || !ids.insert(t.id).second)
      throw InvalidInput("PromptSet: target ids must be unique in 1..M");
    if (t.text.empty()) throw InvalidInput("PromptSet: empty target prompt");
    if (t.text == source_prompt) throw InvalidInput("PromptSet: source prompt listed as a target");
  }
  if (source_prompt.empty()) throw InvalidInput("PromptSet: empty source prompt");
}

void PromptSet::save(const std::filesystem::path& path) const {
  validate();
  nlohmann::json j;
  j["source_prompt"] = source_prompt;
  j["targets"] = nlohmann::json::array();
  for (const auto& t : targets)
    j["targets"].push_back({{"id", t.id}, {"text", t.text}, {"weather", t.weather}, {"time", t.time}});
  j["M"] = targets.size();
  detail::write_json(path, j);
}

PromptSet PromptSet::load(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  PromptSet p;
  try {
    p.source_prompt = j.at("source_prompt").get<std::string>();
    for (const auto& t : j.at("targets"))
      p.targets.push_back({t.at("id").get<std::size_t>(), t.at("text").get<std::string>(),
                           t.value("weather", ""), t.value("time", "")});
  } catch (const nlohmann::json::exception& ex) {
    throw LoadError("malformed prompt set '" + path.string() + "': " + ex.what());
  }
  p.validate();
  return p;
}

PromptSet generate_prompts(const WordList& weathers, const WordList& times, std::string_view templ,
                           std::string_view source_prompt) {
  if (count_occurrences(templ, "{weather}") != 1 || count_occurrences(templ, "{time}") != 1)
    throw InvalidInput("generate_prompts: template needs exactly one {weather} and one {time}");
  PromptSet set;
  set.source_prompt = std::string(source_prompt);
  for (const auto& w : weathers.words)
    for (const auto& t : times.words) {
      std::string text = replace_once(replace_once(std::string(templ), "{weather}", w), "{time}", t);
      set.targets.push_back({set.targets.size() + 1, std::move(text), w, t});
    }
  set.validate();
  return set;
}

std::string fill_template(std::string_view templ, std::string_view value) {
  const auto open = templ.find('{');
  const auto close = templ.find('}', open);
  if (open == std::string_view::npos || close == std::string_view::npos ||
      templ.find('{', open + 1) != std::string_view::npos)
    throw InvalidInput("fill_template: template needs exactly one {placeholder}");
  std::string out(templ.substr(0, open));
  out += value;
  out += templ.substr(close + 1);
  return out;
}

}  // namespace semaug
