#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "semaug/embedding.hpp"
#include "semaug/geometry.hpp"
#include "semaug/nn.hpp"
#include "semaug/tensor.hpp"

namespace semaug {

/// Parametric appearance shift. Transforms run in the order fog blend, blur,
/// rain streaks, snow, brightness.
struct DomainSpec {
  std::string name = "clear";
  Real fog_alpha = 0;        // [0, 0.9]: blend weight toward fog_gray
  Real fog_gray = 0.75;      // [0, 1]
  Real brightness = 1;       // (0, 1.5]
  Real rain_density = 0;     // [0, 0.2]: streaks per pixel
  std::size_t blur_radius = 0;  // [0, 3]: box-blur radius in pixels
  Real snow_density = 0;     // [0, 0.2]: flakes per pixel
  std::uint64_t seed = 0;    // noise seed for streaks/flakes

  /// Named benchmark domains: clear, fog, night, rain, dusk_rain.
  static DomainSpec preset(std::string_view name);
  /// Weather x time-of-day condition used by the caption corpus. Weather is
  /// one of sunny, fog, rain, snow, cloudy, stormy; time one of day,
  /// evening, night.
  static DomainSpec condition(std::string_view weather, std::string_view time);

  bool is_identity() const noexcept;
  /// Throws InvalidInput when a parameter is outside its documented range.
  void validate() const;
};

const std::vector<std::string>& benchmark_domains();
const std::vector<std::string>& toy_classes();

Image apply_domain(const Image& image, const DomainSpec& spec, std::uint64_t noise_seed);

struct Annotation {
  Box box;
  std::size_t class_id = 0;  // 1..K

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct SceneSample {
  Image image;
  std::vector<Annotation> annotations;
  std::string domain;
  std::string file_name;
};

struct Dataset {
  std::vector<std::string> class_names;  // index k-1 names class k
  std::vector<SceneSample> samples;
};

/// Renders `n_images` scenes (1-5 shapes on a textured background) and
/// applies the domain transform. The scene geometry depends only on `seed`,
/// so every domain generated with the same seed shares its annotations.
/// Pixel values are quantised to 1/255 steps.
Dataset generate_synthetic_domain(const DomainSpec& spec, std::size_t n_images,
                                  std::size_t image_size, const std::vector<std::string>& class_set,
                                  std::uint64_t seed);

/// Single-object images paired with captions drawn from their class and
/// weather/time condition; the corpus the toy encoder is pretrained on.
std::vector<CaptionedImage> generate_caption_corpus(std::size_t n, std::size_t image_size,
                                                    std::uint64_t seed);

/// Writes `<dir>/annotations.json` (COCO style) and `<dir>/images/*.png`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Reads COCO-style annotations. Category ids are remapped to 1..K in
/// ascending id order; boxes are converted from [x, y, w, h] to corners.
Dataset load_dataset(const std::filesystem::path& annotation_path,
                     const std::filesystem::path& image_dir);

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w);

struct CropWindow {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t side = 0;

  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

/// Square windows covering `min_fraction`..`max_fraction` of the shorter side.
std::vector<CropWindow> sample_crop_windows(std::size_t height, std::size_t width, std::size_t n,
                                            Rng& rng, Real min_fraction = 0.5,
                                            Real max_fraction = 1.0);

/// `n` random square crops, each resized to size x size.
std::vector<Image> random_crops(const Image& image, std::size_t size, std::size_t n, Rng& rng,
                                Real min_fraction = 0.5, Real max_fraction = 1.0);

Image crop_and_resize(const Image& image, const CropWindow& window, std::size_t size);

Image flip_image_horizontal(const Image& image);

}  // namespace semaug
