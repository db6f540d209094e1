#include "sgz/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sgz/errors.hpp"

namespace sgz {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

namespace {

constexpr char kMagic[8] = {'S', 'G', 'Z', 'A', 'R', 'C', 'H', '1'};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "f32") return 4;
  throw FormatError("unknown dtype '" + dtype + "'");
}

}  // namespace

std::size_t NamedArray::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string NamedArray::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void Archive::add(const std::string& name, NamedArray array) {
  if (array.element_count() != array.values.size()) {
    throw InternalError("array '" + name + "' shape " + array.shape_string() +
                        " does not match its value count");
  }
  if (!arrays.count(name)) order.push_back(name);
  arrays[name] = std::move(array);
}

const NamedArray& Archive::get(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw FormatError("archive has no array '" + name + "'");
  return it->second;
}

void write_archive(const Archive& archive, const std::filesystem::path& path, StoredType type) {
  const std::string dtype = type == StoredType::F64 ? "f64" : "f32";
  const std::size_t width = dtype_size(dtype);

  nlohmann::json manifest;
  manifest["format"] = "sgz-archive";
  manifest["format_version"] = Archive::kFormatVersion;
  manifest["kind"] = archive.kind;
  manifest["metadata"] = archive.metadata;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& name : archive.order) {
    const NamedArray& a = archive.arrays.at(name);
    entries.push_back({{"name", name}, {"shape", a.shape}, {"dtype", dtype}, {"offset", offset}});
    offset += a.values.size() * width;
  }
  manifest["arrays"] = entries;
  manifest["payload_bytes"] = offset;
  const std::string text = manifest.dump(1);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& name : archive.order) {
      const auto& values = archive.arrays.at(name).values;
      if (type == StoredType::F64) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(double)));
      } else {
        std::vector<float> narrow(values.begin(), values.end());
        out.write(reinterpret_cast<const char*>(narrow.data()),
                  static_cast<std::streamsize>(narrow.size() * sizeof(float)));
      }
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move archive into place at " + path.string() + ": " + ec.message());
}

Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(where + "not an sgz archive");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (len > bytes.size() - 16) throw FormatError(where + "truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "malformed manifest: " + e.what());
  }

  Archive archive;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != Archive::kFormatVersion) {
      throw FormatError(where + "unsupported format version " + std::to_string(version) +
                        " (expected " + std::to_string(Archive::kFormatVersion) + ")");
    }
    archive.kind = manifest.at("kind").get<std::string>();
    if (!expected_kind.empty() && archive.kind != expected_kind) {
      throw FormatError(where + "archive kind '" + archive.kind + "', expected '" +
                        expected_kind + "'");
    }
    archive.metadata = manifest.value("metadata", nlohmann::json::object());

    const std::size_t payload_start = 16 + len;
    const std::size_t payload_size = bytes.size() - payload_start;
    const auto declared = manifest.at("payload_bytes").get<std::size_t>();
    if (declared != payload_size) {
      throw FormatError(where + "payload is " + std::to_string(payload_size) + " bytes, manifest declares " +
                        std::to_string(declared) + " (truncated or corrupt)");
    }
    for (const auto& entry : manifest.at("arrays")) {
      NamedArray a;
      const auto name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      for (auto d : a.shape) {
        if (d < 0) throw FormatError(where + "negative dimension in '" + name + "'");
      }
      const auto dtype = entry.at("dtype").get<std::string>();
      const std::size_t width = dtype_size(dtype);
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t count = a.element_count();
      if (offset > payload_size || count * width > payload_size - offset) {
        throw FormatError(where + "array '" + name + "' extends past the payload");
      }
      const char* src = bytes.data() + payload_start + offset;
      a.values.resize(count);
      if (width == 8) {
        std::memcpy(a.values.data(), src, count * 8);
      } else {
        std::vector<float> narrow(count);
        std::memcpy(narrow.data(), src, count * 4);
        std::copy(narrow.begin(), narrow.end(), a.values.begin());
      }
      if (archive.contains(name)) throw FormatError(where + "duplicate array '" + name + "'");
      archive.add(name, std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "invalid manifest: " + e.what());
  }
  return archive;
}

}  // namespace sgz
