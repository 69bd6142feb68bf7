#include "semaug/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "semaug/errors.hpp"

namespace semaug {

namespace {

using nlohmann::json;

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void TensorArchive::add(std::string name, std::vector<std::size_t> shape,
                        std::span<const Real> values) {
  std::vector<float> f(values.size());
  std::transform(values.begin(), values.end(), f.begin(),
                 [](Real v) { return static_cast<float>(v); });
  add_f32(std::move(name), std::move(shape), std::move(f));
}

void TensorArchive::add_f32(std::string name, std::vector<std::size_t> shape,
                            std::vector<float> values) {
  if (contains(name)) throw InvalidInput("TensorArchive: duplicate entry '" + name + "'");
  if (element_count(shape) != values.size())
    throw InvalidInput("TensorArchive: entry '" + name + "' shape does not match data size");
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool TensorArchive::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const ArchiveEntry& e) { return e.name == name; });
}

const ArchiveEntry& TensorArchive::get(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw LoadError("TensorArchive: missing entry '" + std::string(name) + "'");
}

std::vector<Real> TensorArchive::values(std::string_view name) const {
  const auto& e = get(name);
  return {e.data.begin(), e.data.end()};
}

std::string TensorArchive::serialize() const {
  json header;
  header["version"] = 1;
  header["entries"] = json::array();
  for (const auto& e : entries_)
    header["entries"].push_back({{"name", e.name}, {"shape", e.shape}, {"dtype", "f32"}});
  const std::string text = header.dump();

  std::string out;
  put_le<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& e : entries_)
    for (float v : e.data) put_le<float>(out, v);
  return out;
}

TensorArchive TensorArchive::deserialize(std::string_view bytes) {
  if (bytes.size() < 8) throw LoadError("TensorArchive: truncated header length");
  const auto header_len = get_le<std::uint64_t>(bytes.data());
  if (header_len > bytes.size() - 8) throw LoadError("TensorArchive: truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& ex) {
    throw LoadError(std::string("TensorArchive: malformed header JSON: ") + ex.what());
  }
  if (header.value("version", 0) != 1) throw LoadError("TensorArchive: unsupported version");

  TensorArchive archive;
  std::size_t offset = 8 + header_len;
  for (const auto& e : header.at("entries")) {
    if (e.value("dtype", "") != "f32")
      throw LoadError("TensorArchive: entry '" + e.value("name", "") + "' has unsupported dtype");
    auto shape = e.at("shape").get<std::vector<std::size_t>>();
    const std::size_t n = element_count(shape);
    if (offset + 4 * n > bytes.size())
      throw LoadError("TensorArchive: payload truncated at entry '" + e.value("name", "") + "'");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le<float>(bytes.data() + offset + 4 * i);
    offset += 4 * n;
    try {
      archive.add_f32(e.at("name").get<std::string>(), std::move(shape), std::move(data));
    } catch (const InvalidInput& ex) {
      throw LoadError(ex.what());
    }
  }
  if (offset != bytes.size()) throw LoadError("TensorArchive: trailing bytes after payload");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace semaug
