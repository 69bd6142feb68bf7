#include <optional>
#include <string>

#include "commands.hpp"
#include "semaug/embedding.hpp"
#include "semaug/errors.hpp"
#include "semaug/prompts.hpp"

namespace semaug::cli {

namespace fs = std::filesystem;

void add_gen_data(CLI::App& app, const Globals& g) {
  struct Opts {
    std::vector<std::string> domains = benchmark_domains();
    std::size_t n = 500;
    std::size_t image_size = 64;
    fs::path out;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("gen-data", "Render the synthetic multi-domain benchmark");
  cmd->add_option("--domains", o->domains, "Comma-separated domain presets")->delimiter(',');
  cmd->add_option("--n", o->n, "Images per domain")->check(CLI::PositiveNumber);
  cmd->add_option("--image-size", o->image_size, "Square image side in pixels")->check(CLI::Range(32, 1024));
  cmd->add_option("--out", o->out, "Output directory")->required();
  cmd->callback([o, &g] {
    for (const auto& name : o->domains) {
      const Dataset ds = generate_synthetic_domain(DomainSpec::preset(name), o->n, o->image_size, toy_classes(), g.seed);
      save_dataset(ds, o->out / name);
      log("wrote " + std::to_string(ds.samples.size()) + " images to " + (o->out / name).string());
    }
  });
}

void add_curate(CLI::App& app, const Globals&) {
  struct Opts {
    fs::path hyponyms, ranks, merge, similarities, encoder, out, pruned_out, weathers_out;
    std::string anchor = "weather";
    Real sim_threshold = 0.5;
    std::size_t top_k = 10000;
    std::vector<std::string> times{"day", "night", "evening"};
    std::string templ{kTargetTemplate};
    std::string source{kSourcePrompt};
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("curate", "Build the target prompt set from a hyponym list");
  cmd->add_option("--hyponyms", o->hyponyms, "One candidate word per line")->required()->check(CLI::ExistingFile);
  cmd->add_option("--ranks", o->ranks, "Word frequency ranks (word rank per line)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--merge", o->merge, "Synonym merge spec (JSON)")->required()->check(CLI::ExistingFile);
  auto* sim = cmd->add_option("--similarities", o->similarities, "Precomputed similarity to the anchor")
                  ->check(CLI::ExistingFile);
  cmd->add_option("--encoder", o->encoder, "Score similarity with this encoder bundle instead")
      ->check(CLI::ExistingFile)
      ->excludes(sim);
  cmd->add_option("--anchor", o->anchor, "Anchor concept");
  cmd->add_option("--sim-threshold", o->sim_threshold, "Keep words with similarity >= this")->check(CLI::Range(-1.0, 1.0));
  cmd->add_option("--top-k", o->top_k, "Keep words ranked within the top k")->check(CLI::PositiveNumber);
  cmd->add_option("--times", o->times, "Times of day")->delimiter(',');
  cmd->add_option("--template", o->templ, "Target template with {weather} and {time}");
  cmd->add_option("--source-prompt", o->source, "Source-domain prompt");
  cmd->add_option("--pruned-out", o->pruned_out, "Write the list left after both filters");
  cmd->add_option("--weathers-out", o->weathers_out, "Write the merged weather list");
  cmd->add_option("--out", o->out, "Prompt set JSON")->required();
  cmd->callback([o] {
    const WordList words = load_wordlist(o->hyponyms);
    WordList kept;
    if (!o->similarities.empty()) {
      const ScoreTable table = load_score_table(o->similarities);
      kept = prune_by_similarity(
          words,
          [&](const std::string& w) -> std::optional<Real> {
            auto it = table.find(w);
            return it == table.end() ? std::nullopt : std::optional<Real>(it->second);
          },
          o->sim_threshold);
    } else if (!o->encoder.empty()) {
      kept = prune_by_similarity(words, o->anchor, o->sim_threshold, EncoderBundle::load(o->encoder));
    } else {
      throw ConfigError("curate: either --similarities or --encoder is required");
    }
    log("similarity filter: " + std::to_string(words.size()) + " -> " + std::to_string(kept.size()));
    const WordList pruned = prune_by_frequency(kept, load_score_table(o->ranks), o->top_k);
    log("frequency filter: " + std::to_string(kept.size()) + " -> " + std::to_string(pruned.size()));
    if (!o->pruned_out.empty()) save_wordlist(o->pruned_out, pruned);

    const WordList weathers = merge_synonyms(pruned, MergeSpec::load(o->merge));
    std::string joined;
    for (const auto& w : weathers.words) joined += (joined.empty() ? "" : ", ") + w;
    log("merged: " + joined);
    if (!o->weathers_out.empty()) save_wordlist(o->weathers_out, weathers);

    const PromptSet prompts = generate_prompts(weathers, make_wordlist(o->times, "cli"), o->templ, o->source);
    prompts.save(o->out);
    log("wrote " + std::to_string(prompts.size()) + " prompts to " + o->out.string());
  });
}

}  // namespace semaug::cli
