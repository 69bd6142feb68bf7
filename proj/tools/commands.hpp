#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semaug/data.hpp"

namespace semaug::cli {

struct Globals {
  std::uint64_t seed = 0;
  bool deterministic = false;
  const CLI::Option* seed_option = nullptr;

  bool seed_given() const { return seed_option != nullptr && seed_option->count() > 0; }
};

void add_gen_data(CLI::App& app, const Globals& g);
void add_curate(CLI::App& app, const Globals& g);
void add_pretrain_embed(CLI::App& app, const Globals& g);
void add_optimize_aug(CLI::App& app, const Globals& g);
void add_train(CLI::App& app, const Globals& g);
void add_eval(CLI::App& app, const Globals& g);
void add_project(CLI::App& app, const Globals& g);
void add_ablate(CLI::App& app, const Globals& g);

// Shared helpers (io.cpp).

/// A directory holding annotations.json (+ images/) is one dataset; otherwise
/// every immediate subdirectory that holds one is loaded, in name order.
std::vector<Dataset> load_data_dir(const std::filesystem::path& dir);

/// The dataset whose domain is `domain`, or the only dataset in `dir`.
Dataset load_domain(const std::filesystem::path& dir, const std::string& domain);

/// Images of a dataset directory, or every *.png directly under `dir`.
std::vector<Image> load_images(const std::filesystem::path& dir);

void log(const std::string& message);

}  // namespace semaug::cli
