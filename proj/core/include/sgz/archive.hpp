#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace sgz {

// A named numeric array as stored in an archive. Values are always held as
// double in memory; on disk they are little-endian f64 or f32.
struct NamedArray {
  std::vector<std::int64_t> shape;
  std::vector<double> values;

  std::size_t element_count() const;
  std::string shape_string() const;
  bool operator==(const NamedArray&) const = default;
};

enum class StoredType { F64, F32 };

// On-disk layout:
//   8 bytes   magic "SGZARCH1"
//   8 bytes   manifest length N (little-endian u64)
//   N bytes   manifest, UTF-8 JSON text
//   payload   arrays back to back, in manifest order
//
// The manifest records the format version, an archive kind, free-form
// metadata, and per array: name, shape, dtype ("f64"/"f32"), byte offset
// into the payload. Loading rejects truncated or oversized payloads.
struct Archive {
  static constexpr int kFormatVersion = 1;

  std::string kind;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, NamedArray> arrays;
  std::vector<std::string> order;  // insertion order, preserved on disk

  void add(const std::string& name, NamedArray array);
  const NamedArray& get(const std::string& name) const;
  bool contains(const std::string& name) const { return arrays.count(name) != 0; }
};

// Writes to a sibling temporary file and renames it into place.
void write_archive(const Archive& archive, const std::filesystem::path& path,
                   StoredType type = StoredType::F64);

// Throws IoError when unreadable and FormatError on any structural problem.
// `expected_kind`, when non-empty, must match the stored kind.
Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind = {});

}  // namespace sgz
