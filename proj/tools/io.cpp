#include <algorithm>
#include <cstdio>

#include "commands.hpp"
#include "semaug/errors.hpp"

namespace semaug::cli {

namespace fs = std::filesystem;

void log(const std::string& message) { std::fprintf(stderr, "%s\n", message.c_str()); }

std::vector<Dataset> load_data_dir(const fs::path& dir) {
  if (fs::exists(dir / "annotations.json")) return {load_dataset(dir / "annotations.json", dir / "images")};
  if (!fs::is_directory(dir)) throw IoError("no dataset at '" + dir.string() + "'");
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "annotations.json")) subdirs.push_back(e.path());
  if (subdirs.empty()) throw IoError("no annotations.json under '" + dir.string() + "'");
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<Dataset> out;
  for (const auto& d : subdirs) out.push_back(load_dataset(d / "annotations.json", d / "images"));
  return out;
}

Dataset load_domain(const fs::path& dir, const std::string& domain) {
  auto sets = load_data_dir(dir);
  if (sets.size() == 1) return std::move(sets.front());
  for (auto& s : sets)
    if (!s.samples.empty() && s.samples.front().domain == domain) return std::move(s);
  throw IoError("no '" + domain + "' dataset under '" + dir.string() + "'");
}

std::vector<Image> load_images(const fs::path& dir) {
  if (fs::exists(dir / "annotations.json")) {
    std::vector<Image> out;
    for (auto& s : load_dataset(dir / "annotations.json", dir / "images").samples) out.push_back(std::move(s.image));
    return out;
  }
  const fs::path root = fs::exists(dir / "images") ? dir / "images" : dir;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  if (files.empty()) throw IoError("no PNG images in '" + root.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& f : files) out.push_back(read_png(f));
  return out;
}

}  // namespace semaug::cli
