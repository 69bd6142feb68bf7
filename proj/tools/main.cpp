#include <cstdio>
#include <exception>

#include "commands.hpp"
#include "semaug/errors.hpp"

int main(int argc, char** argv) {
  using namespace semaug::cli;
  CLI::App app{"Semantic feature augmentation for single-domain detector generalization"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI file with option defaults, one [section] per subcommand");

  Globals g;
  g.seed_option = app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_flag("--deterministic", g.deterministic, "Run single-threaded");

  add_gen_data(app, g);
  add_curate(app, g);
  add_pretrain_embed(app, g);
  add_optimize_aug(app, g);
  add_train(app, g);
  add_eval(app, g);
  add_project(app, g);
  add_ablate(app, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const semaug::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
