#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facebots/common.hpp"
#include "facebots/facekit.hpp"
#include "facebots/recognizer.hpp"

// Training sets on disk: one binary face-vector file per entry plus a
// manifest.json describing who, where and when each entry came from.
//
// Face-vector file (.fvec), little-endian:
//   "FVEC" | u32 version=1 | u32 dim | dim x f64 values | dim x u8 mask
namespace facebots::training_io {

inline constexpr std::uint32_t kFvecVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw SchemaError("truncated face-vector file");
  return v;
}

}  // namespace detail

inline void write_fvec(const std::filesystem::path& path, const facekit::PreprocessedFace& f) {
  if (f.values.size() != f.mask.size()) throw DimensionError("face values and mask differ in size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write("FVEC", 4);
  detail::put<std::uint32_t>(out, kFvecVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(f.values.size()));
  for (double v : f.values) detail::put<double>(out, v);
  out.write(reinterpret_cast<const char*>(f.mask.data()), static_cast<std::streamsize>(f.mask.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline facekit::PreprocessedFace read_fvec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "FVEC", 4) != 0) {
    throw SchemaError("'" + path.string() + "' is not a face-vector file");
  }
  if (detail::get<std::uint32_t>(in) != kFvecVersion) {
    throw SchemaError("unsupported face-vector version in '" + path.string() + "'");
  }
  const auto dim = detail::get<std::uint32_t>(in);
  if (dim != facekit::kFaceDim) {
    throw DimensionError("face vector has " + std::to_string(dim) + " entries, expected " +
                         std::to_string(facekit::kFaceDim));
  }
  facekit::PreprocessedFace f;
  f.values.resize(dim);
  for (auto& v : f.values) v = detail::get<double>(in);
  f.mask.resize(dim);
  in.read(reinterpret_cast<char*>(f.mask.data()), dim);
  if (!in) throw SchemaError("truncated face-vector file '" + path.string() + "'");
  for (auto m : f.mask) {
    if (m > 1) throw SchemaError("mask entries must be 0 or 1");
  }
  return f;
}

// Writes every set under `dir`: <dir>/<person_id>/<n>.fvec and one manifest.
inline void export_training_sets(const std::filesystem::path& dir,
                                 const std::vector<recognizer::TrainingSet>& sets) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = kFvecVersion;
  manifest["dim"] = facekit::kFaceDim;
  manifest["raster"] = facekit::kRaster;
  manifest["entries"] = nlohmann::json::array();
  for (const auto& set : sets) {
    if (set.person_id.empty() || set.person_id.find('/') != std::string::npos) {
      throw InvalidArgument("person id '" + set.person_id + "' cannot be used as a directory");
    }
    std::filesystem::create_directories(dir / set.person_id);
    for (std::size_t n = 0; n < set.entries.size(); ++n) {
      const auto& e = set.entries[n];
      const auto rel = set.person_id + "/" + std::to_string(n) + ".fvec";
      write_fvec(dir / rel, e.face);
      manifest["entries"].push_back({{"file", rel},
                                     {"person_id", set.person_id},
                                     {"source", recognizer::to_string(e.source)},
                                     {"session_id", e.session_id},
                                     {"timestamp", e.timestamp}});
    }
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << "\n";
}

// Reads the sets back, in manifest order, grouped by person id.
inline std::vector<recognizer::TrainingSet> import_training_sets(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no manifest.json in '" + dir.string() + "'");
  std::vector<recognizer::TrainingSet> sets;
  std::map<PersonId, std::size_t> index;
  try {
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.at("version").get<std::uint32_t>() != kFvecVersion) {
      throw SchemaError("unsupported training manifest version");
    }
    for (const auto& e : manifest.at("entries")) {
      const auto pid = e.at("person_id").get<std::string>();
      auto it = index.find(pid);
      if (it == index.end()) {
        it = index.emplace(pid, sets.size()).first;
        sets.push_back({pid, {}, recognizer::kOfflineCap});
      }
      auto& set = sets[it->second];
      set.entries.push_back({read_fvec(dir / e.at("file").get<std::string>()),
                             recognizer::source_from_string(e.at("source").get<std::string>()),
                             e.value("session_id", std::string{}),
                             e.at("timestamp").get<Timestamp>()});
      set.cap = std::max(set.cap, set.entries.size());
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed training manifest: ") + e.what());
  }
  return sets;
}

}  // namespace facebots::training_io
