#include "semaug/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>

#include "json_io.hpp"
#include "semaug/errors.hpp"

namespace semaug {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

Real uniform(Rng& rng, Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(rng); }

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Real quantize(Real v) { return std::round(std::clamp(v, Real{0}, Real{1}) * 255.0) / 255.0; }

using Rgb = std::array<Real, 3>;

Rgb class_color(std::string_view cls) {
  if (cls == "circle") return {0.85, 0.30, 0.25};
  if (cls == "square") return {0.30, 0.80, 0.35};
  if (cls == "triangle") return {0.30, 0.40, 0.90};
  throw InvalidInput("unknown toy class '" + std::string(cls) + "'");
}

Image render_background(std::size_t size, Rng& rng) {
  Image img(size, size, 3);
  const Real gray = uniform(rng, 0.35, 0.6);
  Rgb base;
  for (auto& b : base) b = gray + uniform(rng, -0.08, 0.08);
  const Real gx = uniform(rng, -0.1, 0.1), gy = uniform(rng, -0.1, 0.1);
  const Real fx = uniform(rng, 0.1, 0.5), fy = uniform(rng, 0.1, 0.5);
  const Real phase = uniform(rng, 0, 2 * std::numbers::pi);
  std::normal_distribution<Real> noise(0.0, 0.02);
  const Real inv = 1.0 / static_cast<Real>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const Real tex = 0.04 * std::sin(fx * x + fy * y + phase);
      const Real grad = gx * (x * inv - 0.5) + gy * (y * inv - 0.5);
      for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = base[c] + tex + grad + noise(rng);
    }
  return img;
}

// Shape occupies the integer square [x0, x0+side) x [y0, y0+side).
void draw_shape(Image& img, std::string_view cls, std::size_t x0, std::size_t y0, std::size_t side,
                Rng& rng) {
  const Rgb base = class_color(cls);
  Rgb col;
  for (std::size_t c = 0; c < 3; ++c) col[c] = base[c] + uniform(rng, -0.12, 0.12);
  const Real s = static_cast<Real>(side);
  const Real cx = x0 + s / 2, cy = y0 + s / 2;
  std::normal_distribution<Real> shade(0.0, 0.015);
  for (std::size_t y = y0; y < y0 + side && y < img.height(); ++y)
    for (std::size_t x = x0; x < x0 + side && x < img.width(); ++x) {
      const Real px = x + 0.5, py = y + 0.5;
      bool inside = false;
      if (cls == "circle") {
        inside = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= (s / 2) * (s / 2);
      } else if (cls == "square") {
        inside = true;
      } else {
        // Upright isosceles triangle filling the square: apex top-centre.
        const Real t = (py - y0) / s;  // 0 at apex row, 1 at base
        inside = std::abs(px - cx) <= t * s / 2;
      }
      if (!inside) continue;
      const Real sh = shade(rng);
      for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = col[c] + sh;
    }
}

Image box_blur(const Image& in, std::size_t r) {
  if (r == 0) return in;
  const long R = static_cast<long>(r);
  const long H = static_cast<long>(in.height()), W = static_cast<long>(in.width());
  Image tmp(in.height(), in.width(), in.channels());
  Image out(in.height(), in.width(), in.channels());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < in.channels(); ++c) {
        Real s = 0;
        for (long d = -R; d <= R; ++d) s += in(y, std::clamp(x + d, 0L, W - 1), c);
        tmp(y, x, c) = s / static_cast<Real>(2 * R + 1);
      }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (std::size_t c = 0; c < in.channels(); ++c) {
        Real s = 0;
        for (long d = -R; d <= R; ++d) s += tmp(std::clamp(y + d, 0L, H - 1), x, c);
        out(y, x, c) = s / static_cast<Real>(2 * R + 1);
      }
  return out;
}

void blend_pixel(Image& img, long y, long x, Real target, Real alpha) {
  if (y < 0 || x < 0 || y >= static_cast<long>(img.height()) || x >= static_cast<long>(img.width()))
    return;
  for (std::size_t c = 0; c < img.channels(); ++c)
    img(y, x, c) = (1 - alpha) * img(y, x, c) + alpha * target;
}

}  // namespace

// ---------------------------------------------------------------------------
// Domains

DomainSpec DomainSpec::preset(std::string_view name) {
  if (name == "clear") return condition("sunny", "day");
  DomainSpec s;
  if (name == "fog") {
    s = condition("fog", "day");
  } else if (name == "night") {
    s = condition("sunny", "night");
  } else if (name == "rain") {
    s = condition("rain", "day");
  } else if (name == "dusk_rain") {
    s = condition("rain", "evening");
  } else {
    throw InvalidInput("unknown domain '" + std::string(name) + "'");
  }
  s.name = std::string(name);
  return s;
}

DomainSpec DomainSpec::condition(std::string_view weather, std::string_view time) {
  DomainSpec s;
  s.name = std::string(weather) + "_" + std::string(time);
  if (weather == "sunny") {
  } else if (weather == "fog") {
    s.fog_alpha = 0.55;
    s.blur_radius = 1;
  } else if (weather == "rain") {
    s.rain_density = 0.035;
    s.brightness = 0.9;
  } else if (weather == "snow") {
    s.snow_density = 0.04;
    s.fog_alpha = 0.1;
    s.fog_gray = 0.95;
  } else if (weather == "cloudy") {
    s.fog_alpha = 0.25;
    s.fog_gray = 0.6;
    s.brightness = 0.8;
  } else if (weather == "stormy") {
    s.fog_alpha = 0.2;
    s.fog_gray = 0.5;
    s.rain_density = 0.05;
    s.brightness = 0.6;
  } else {
    throw InvalidInput("unknown weather '" + std::string(weather) + "'");
  }
  if (time == "day") {
  } else if (time == "evening") {
    s.brightness *= 0.55;
  } else if (time == "night") {
    s.brightness *= 0.3;
  } else {
    throw InvalidInput("unknown time of day '" + std::string(time) + "'");
  }
  if (weather == "sunny" && time == "day") s.name = "clear";
  return s;
}

bool DomainSpec::is_identity() const noexcept {
  return fog_alpha == 0 && brightness == 1 && rain_density == 0 && blur_radius == 0 &&
         snow_density == 0;
}

void DomainSpec::validate() const {
  auto in = [](Real v, Real lo, Real hi) { return v >= lo && v <= hi; };
  if (!in(fog_alpha, 0, 0.9)) throw InvalidInput("DomainSpec: fog_alpha outside [0, 0.9]");
  if (!in(fog_gray, 0, 1)) throw InvalidInput("DomainSpec: fog_gray outside [0, 1]");
  if (!(brightness > 0 && brightness <= 1.5)) throw InvalidInput("DomainSpec: brightness outside (0, 1.5]");
  if (!in(rain_density, 0, 0.2)) throw InvalidInput("DomainSpec: rain_density outside [0, 0.2]");
  if (blur_radius > 3) throw InvalidInput("DomainSpec: blur_radius outside [0, 3]");
  if (!in(snow_density, 0, 0.2)) throw InvalidInput("DomainSpec: snow_density outside [0, 0.2]");
}

const std::vector<std::string>& benchmark_domains() {
  static const std::vector<std::string> d{"clear", "fog", "night", "rain", "dusk_rain"};
  return d;
}

const std::vector<std::string>& toy_classes() {
  static const std::vector<std::string> c{"circle", "square", "triangle"};
  return c;
}

Image apply_domain(const Image& image, const DomainSpec& spec, std::uint64_t noise_seed) {
  spec.validate();
  if (spec.is_identity()) return image;
  Image out = image;
  if (spec.fog_alpha > 0)
    for (Real& v : out.values()) v = (1 - spec.fog_alpha) * v + spec.fog_alpha * spec.fog_gray;
  out = box_blur(out, spec.blur_radius);

  Rng rng(mix(noise_seed, spec.seed));
  const Real area = static_cast<Real>(out.height() * out.width());
  const auto n_streaks = static_cast<std::size_t>(std::round(spec.rain_density * area));
  for (std::size_t i = 0; i < n_streaks; ++i) {
    Real x = uniform(rng, 0, static_cast<Real>(out.width()));
    Real y = uniform(rng, -4, static_cast<Real>(out.height()));
    const auto len = uniform_index(rng, 5, 10);
    for (std::size_t k = 0; k < len; ++k) {
      blend_pixel(out, static_cast<long>(y), static_cast<long>(x), 0.85, 0.45);
      y += 1;
      x += 0.3;
    }
  }
  const auto n_flakes = static_cast<std::size_t>(std::round(spec.snow_density * area));
  for (std::size_t i = 0; i < n_flakes; ++i) {
    const auto x = static_cast<long>(uniform_index(rng, 0, out.width() - 1));
    const auto y = static_cast<long>(uniform_index(rng, 0, out.height() - 1));
    blend_pixel(out, y, x, 0.95, 0.8);
    if (uniform(rng, 0, 1) < 0.5) blend_pixel(out, y, x + 1, 0.95, 0.6);
  }
  for (Real& v : out.values()) v = std::clamp(v * spec.brightness, Real{0}, Real{1});
  return out;
}

// ---------------------------------------------------------------------------
// Generators

Dataset generate_synthetic_domain(const DomainSpec& spec, std::size_t n_images,
                                  std::size_t image_size, const std::vector<std::string>& class_set,
                                  std::uint64_t seed) {
  if (n_images == 0) throw InvalidInput("generate_synthetic_domain: n_images must be >= 1");
  if (class_set.empty()) throw InvalidInput("generate_synthetic_domain: empty class set");
  if (image_size < 32) throw InvalidInput("generate_synthetic_domain: image_size must be >= 32");
  for (const auto& c : class_set) (void)class_color(c);
  spec.validate();

  Dataset ds;
  ds.class_names = class_set;
  const Real scale = static_cast<Real>(image_size) / 64.0;
  const auto min_side = static_cast<std::size_t>(std::round(14 * scale));
  const auto max_side = static_cast<std::size_t>(std::round(28 * scale));
  for (std::size_t i = 0; i < n_images; ++i) {
    Rng rng(mix(seed, i));
    SceneSample s;
    s.image = render_background(image_size, rng);
    const std::size_t count = uniform_index(rng, 1, 5);
    for (std::size_t k = 0; k < count; ++k) {
      for (int attempt = 0; attempt < 30; ++attempt) {
        const std::size_t side = uniform_index(rng, min_side, max_side);
        const std::size_t x0 = uniform_index(rng, 1, image_size - side - 1);
        const std::size_t y0 = uniform_index(rng, 1, image_size - side - 1);
        const Box box{static_cast<Real>(x0), static_cast<Real>(y0), static_cast<Real>(x0 + side),
                      static_cast<Real>(y0 + side)};
        const bool overlaps = std::any_of(s.annotations.begin(), s.annotations.end(),
                                          [&](const Annotation& a) { return iou(a.box, box) > 0.1; });
        if (overlaps) continue;
        const std::size_t cls = uniform_index(rng, 0, class_set.size() - 1);
        draw_shape(s.image, class_set[cls], x0, y0, side, rng);
        s.annotations.push_back({box, cls + 1});
        break;
      }
    }
    s.image = apply_domain(s.image, spec, mix(mix(seed, i), fnv1a(spec.name)));
    for (Real& v : s.image.values()) v = quantize(v);
    s.domain = spec.name;
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    s.file_name = name;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<CaptionedImage> generate_caption_corpus(std::size_t n, std::size_t image_size,
                                                    std::uint64_t seed) {
  static const std::vector<std::string> weathers{"sunny", "fog", "rain", "snow", "cloudy", "stormy"};
  static const std::vector<std::string> times{"day", "evening", "night"};
  const auto& classes = toy_classes();
  std::vector<CaptionedImage> out;
  out.reserve(n);
  const Real scale = static_cast<Real>(image_size) / 64.0;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix(seed ^ 0xc0ffeeULL, i));
    const auto& cls = classes[uniform_index(rng, 0, classes.size() - 1)];
    const auto& weather = weathers[uniform_index(rng, 0, weathers.size() - 1)];
    const auto& time = times[uniform_index(rng, 0, times.size() - 1)];
    Image img = render_background(image_size, rng);
    const std::size_t side = uniform_index(rng, static_cast<std::size_t>(20 * scale),
                                           static_cast<std::size_t>(40 * scale));
    const std::size_t x0 = uniform_index(rng, 1, image_size - side - 1);
    const std::size_t y0 = uniform_index(rng, 1, image_size - side - 1);
    draw_shape(img, cls, x0, y0, side, rng);
    img = apply_domain(img, DomainSpec::condition(weather, time), mix(seed, i));
    for (Real& v : img.values()) v = quantize(v);

    std::string caption;
    const std::size_t tmpl = uniform_index(rng, 0, 2);
    const std::string condition =
        weather == "sunny" && time == "day" && uniform(rng, 0, 1) < 0.5
            ? "during the day"
            : "on a " + weather + " " + time;
    if (tmpl == 0) {
      caption = "a photo of a " + cls;
    } else if (tmpl == 1) {
      caption = "an image taken " + condition;
    } else {
      caption = "a photo of a " + cls + " taken " + condition;
    }
    out.push_back({std::move(img), std::move(caption)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str()))
    throw LoadError("cannot read PNG '" + path.string() + "': " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
    throw LoadError("cannot decode PNG '" + path.string() + "': " + img.message);
  Image out(img.height, img.width, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) out.values()[i] = buf[i] / 255.0;
  png_image_free(&img);
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3) throw InvalidInput("write_png: expected 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<unsigned char> buf(image.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::lround(std::clamp(image.values()[i], 0.0, 1.0) * 255.0));
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
}

// ---------------------------------------------------------------------------
// COCO-style IO

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  using nlohmann::json;
  json j;
  j["info"] = {{"description", "semaug synthetic dataset"},
               {"domain", dataset.samples.empty() ? "" : dataset.samples.front().domain}};
  j["categories"] = json::array();
  for (std::size_t k = 0; k < dataset.class_names.size(); ++k)
    j["categories"].push_back({{"id", k + 1}, {"name", dataset.class_names[k]}});
  j["images"] = json::array();
  j["annotations"] = json::array();
  std::size_t ann_id = 1;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const std::string file = s.file_name.empty() ? std::to_string(i) + ".png" : s.file_name;
    j["images"].push_back(
        {{"id", i + 1}, {"file_name", file}, {"width", s.image.width()}, {"height", s.image.height()}});
    for (const auto& a : s.annotations) {
      j["annotations"].push_back({{"id", ann_id++},
                                  {"image_id", i + 1},
                                  {"category_id", a.class_id},
                                  {"bbox", {a.box.x_min, a.box.y_min, a.box.width(), a.box.height()}},
                                  {"area", a.box.area()},
                                  {"iscrowd", 0}});
    }
    write_png(dir / "images" / file, s.image);
  }
  detail::write_json(dir / "annotations.json", j);
}

Dataset load_dataset(const std::filesystem::path& annotation_path,
                     const std::filesystem::path& image_dir) {
  using nlohmann::json;
  const json j = detail::read_json(annotation_path);
  Dataset ds;
  try {
    std::map<long, std::string> cats;
    for (const auto& c : j.at("categories")) cats[c.at("id").get<long>()] = c.at("name").get<std::string>();
    std::map<long, std::size_t> cat_index;
    for (const auto& [id, name] : cats) {
      cat_index[id] = ds.class_names.size() + 1;
      ds.class_names.push_back(name);
    }
    std::map<long, std::size_t> image_index;
    for (const auto& im : j.at("images")) {
      const long id = im.at("id").get<long>();
      SceneSample s;
      s.file_name = im.at("file_name").get<std::string>();
      const auto path = image_dir / s.file_name;
      if (!std::filesystem::exists(path))
        throw LoadError("image id " + std::to_string(id) + ": missing file '" + path.string() + "'");
      s.image = read_png(path);
      if (im.contains("width") && im.at("width").get<std::size_t>() != s.image.width())
        throw LoadError("image id " + std::to_string(id) + ": width does not match file");
      if (im.contains("height") && im.at("height").get<std::size_t>() != s.image.height())
        throw LoadError("image id " + std::to_string(id) + ": height does not match file");
      if (j.contains("info") && j["info"].contains("domain"))
        s.domain = j["info"]["domain"].get<std::string>();
      image_index[id] = ds.samples.size();
      ds.samples.push_back(std::move(s));
    }
    for (const auto& a : j.at("annotations")) {
      const long aid = a.value("id", -1L);
      const long img_id = a.at("image_id").get<long>();
      auto it = image_index.find(img_id);
      if (it == image_index.end())
        throw LoadError("annotation id " + std::to_string(aid) + ": unknown image id " +
                        std::to_string(img_id));
      auto ct = cat_index.find(a.at("category_id").get<long>());
      if (ct == cat_index.end())
        throw LoadError("annotation id " + std::to_string(aid) + ": unknown category id");
      const auto bbox = a.at("bbox").get<std::vector<Real>>();
      if (bbox.size() != 4) throw LoadError("annotation id " + std::to_string(aid) + ": bbox needs 4 values");
      auto& s = ds.samples[it->second];
      const Box box{bbox[0], bbox[1], bbox[0] + bbox[2], bbox[1] + bbox[3]};
      if (bbox[2] <= 0 || bbox[3] <= 0 || box.x_min < 0 || box.y_min < 0 ||
          box.x_max > static_cast<Real>(s.image.width()) ||
          box.y_max > static_cast<Real>(s.image.height()))
        throw LoadError("annotation id " + std::to_string(aid) + ": bbox out of image bounds");
      s.annotations.push_back({box, ct->second});
    }
  } catch (const json::exception& ex) {
    throw LoadError("malformed COCO annotations in '" + annotation_path.string() + "': " + ex.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Resampling

Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || image.empty()) throw InvalidInput("resize_bilinear: empty size");
  Image out(out_h, out_w, image.channels());
  const Real sy = static_cast<Real>(image.height()) / static_cast<Real>(out_h);
  const Real sx = static_cast<Real>(image.width()) / static_cast<Real>(out_w);
  const Real maxy = static_cast<Real>(image.height() - 1), maxx = static_cast<Real>(image.width() - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const Real fy = std::clamp((y + 0.5) * sy - 0.5, Real{0}, maxy);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height() - 1);
    const Real wy = fy - static_cast<Real>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const Real fx = std::clamp((x + 0.5) * sx - 0.5, Real{0}, maxx);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width() - 1);
      const Real wx = fx - static_cast<Real>(x0);
      for (std::size_t c = 0; c < image.channels(); ++c)
        out(y, x, c) = (1 - wy) * ((1 - wx) * image(y0, x0, c) + wx * image(y0, x1, c)) +
                       wy * ((1 - wx) * image(y1, x0, c) + wx * image(y1, x1, c));
    }
  }
  return out;
}

std::vector<CropWindow> sample_crop_windows(std::size_t height, std::size_t width, std::size_t n,
                                            Rng& rng, Real min_fraction, Real max_fraction) {
  if (n == 0) throw InvalidInput("random_crops: n must be >= 1");
  const std::size_t shorter = std::min(height, width);
  const auto lo = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(min_fraction * shorter)));
  const auto hi = std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(max_fraction * shorter)), lo, shorter);
  std::vector<CropWindow> out;
  for (std::size_t i = 0; i < n; ++i) {
    CropWindow w;
    w.side = uniform_index(rng, lo, hi);
    w.x = uniform_index(rng, 0, width - w.side);
    w.y = uniform_index(rng, 0, height - w.side);
    out.push_back(w);
  }
  return out;
}

Image crop_and_resize(const Image& image, const CropWindow& window, std::size_t size) {
  const std::size_t side = std::min({window.side, image.height() - std::min(window.y, image.height()),
                                     image.width() - std::min(window.x, image.width())});
  if (side == 0) throw InvalidInput("crop_and_resize: empty window");
  Image crop(side, side, image.channels());
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x)
      for (std::size_t c = 0; c < image.channels(); ++c)
        crop(y, x, c) = image(window.y + y, window.x + x, c);
  if (side == size) return crop;
  return resize_bilinear(crop, size, size);
}

std::vector<Image> random_crops(const Image& image, std::size_t size, std::size_t n, Rng& rng,
                                Real min_fraction, Real max_fraction) {
  std::vector<Image> out;
  for (const auto& w : sample_crop_windows(image.height(), image.width(), n, rng, min_fraction, max_fraction))
    out.push_back(crop_and_resize(image, w, size));
  return out;
}

Image flip_image_horizontal(const Image& image) {
  Image out(image.height(), image.width(), image.channels());
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x)
      for (std::size_t c = 0; c < image.channels(); ++c)
        out(y, image.width() - 1 - x, c) = image(y, x, c);
  return out;
}

}  // namespace semaug
