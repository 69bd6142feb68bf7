#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semaug/tensor.hpp"

namespace semaug {

/// One named f32 tensor.
struct ArchiveEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

/// Named collection of f32 tensors.
///
/// File layout:
///   u64 little-endian header length N
///   N bytes of UTF-8 JSON: {"entries":[{"dtype":"f32","name":..,"shape":[..]}],"version":1}
///   row-major little-endian f32 payloads, concatenated in entry order
class TensorArchive {
 public:
  /// Stores `values` rounded to f32. Throws InvalidInput on a duplicate name or
  /// a shape/size mismatch.
  void add(std::string name, std::vector<std::size_t> shape, std::span<const Real> values);
  void add_f32(std::string name, std::vector<std::size_t> shape, std::vector<float> values);

  bool contains(std::string_view name) const;
  const ArchiveEntry& get(std::string_view name) const;
  std::vector<Real> values(std::string_view name) const;
  const std::vector<ArchiveEntry>& entries() const noexcept { return entries_; }

  std::string serialize() const;
  static TensorArchive deserialize(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

 private:
  std::vector<ArchiveEntry> entries_;
};

/// Helpers shared by every artifact writer.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace semaug
