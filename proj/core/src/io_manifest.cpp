#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "scd2te/io.hpp"

namespace scd2te {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::validation:
      return "validation";
    case Split::same_test:
      return "same_test";
    case Split::different_test:
      return "different_test";
  }
  return "unknown";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "validation") return Split::validation;
  if (text == "same_test") return Split::same_test;
  if (text == "different_test") return Split::different_test;
  throw InvalidArgument("unknown split '" + text +
                        "' (train|validation|same_test|different_test)");
}

std::vector<ManifestEntry> DatasetManifest::with_split(Split split) const {
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == split) out.push_back(e);
  }
  return out;
}

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest manifest;
  std::set<std::filesystem::path> seen;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    if (fields.size() < 3 || fields.size() > 4) {
      throw ParseError("expected split,organ,image_path[,mask_path], got " +
                       std::to_string(fields.size()) + " fields",
                       line_no);
    }
    ManifestEntry entry;
    try {
      entry.split = parse_split(fields[0]);
    } catch (const InvalidArgument& e) {
      throw ParseError(e.what(), line_no);
    }
    entry.organ = fields[1];
    if (entry.organ.empty()) throw ParseError("organ tag is empty", line_no);
    if (fields[2].empty()) throw ParseError("image path is empty", line_no);
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    entry.image = resolve(fields[2]);
    if (fields.size() == 4) {
      if (fields[3].empty()) throw ParseError("mask path is empty", line_no);
      entry.mask = resolve(fields[3]);
    }
    if (entry.split == Split::train && !entry.mask) {
      throw ParseError("train entries need a mask path", line_no);
    }
    if (!seen.insert(entry.image.lexically_normal()).second) {
      throw ParseError("duplicate image path " + entry.image.string(), line_no);
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open manifest");
  DatasetManifest m;
  try {
    m = parse_manifest(in, path.parent_path());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  for (const ManifestEntry& e : m.entries) {
    if (!std::filesystem::exists(e.image)) {
      throw FormatError(path.string() + ": missing image " + e.image.string());
    }
    if (e.mask && !std::filesystem::exists(*e.mask)) {
      throw FormatError(path.string() + ": missing mask " + e.mask->string());
    }
  }
  return m;
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  for (const ManifestEntry& e : manifest.entries) {
    out << to_string(e.split) << ',' << e.organ << ',' << e.image.string();
    if (e.mask) out << ',' << e.mask->string();
    out << '\n';
  }
}

TrainingExample load_example(const ManifestEntry& entry, ColorMode mode) {
  if (!entry.mask) throw InvalidArgument(entry.image.string() + " has no mask");
  TrainingExample ex{load_image(entry.image, mode), load_mask(*entry.mask)};
  if (!ex.planes.front().same_shape(ex.mask)) {
    throw InvalidArgument(entry.image.string() + ": mask geometry differs from the image");
  }
  return ex;
}

}  // namespace scd2te
