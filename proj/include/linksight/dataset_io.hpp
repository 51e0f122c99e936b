#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/trace.hpp"

namespace linksight {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io: cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("io: cannot create " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("io: write failed for " + path.string());
}

/// Writes a dataset directory: manifest.csv plus one <id>.trace per trace.
inline void write_dataset(const std::filesystem::path& dir,
                          const LabeledDataset& dataset) {
  std::filesystem::create_directories(dir);
  {
    std::ostringstream manifest;
    write_manifest(manifest, dataset);
    write_file(dir / "manifest.csv", manifest.str());
  }
  for (const Trace& t : dataset.traces) {
    if (t.id.empty() || t.id.find('/') != std::string::npos)
      throw IoError("io: trace id '" + t.id + "' is not a valid file name");
    write_file(dir / (t.id + ".trace"), serialize_trace(t));
  }
}

/// Reads a dataset directory written by write_dataset. The manifest decides
/// which traces exist and in what order; labels must agree with the trace
/// files.
inline LabeledDataset read_dataset(const std::filesystem::path& dir) {
  std::filesystem::path manifest_path = dir / "manifest.csv";
  std::istringstream manifest_in(read_file(manifest_path));
  Manifest manifest = parse_manifest(manifest_in);
  LabeledDataset dataset;
  dataset.trace_length = manifest.trace_length;
  dataset.seed = manifest.seed;
  dataset.provenance = manifest.provenance;
  dataset.traces.reserve(manifest.rows.size());
  for (const ManifestRow& row : manifest.rows) {
    Trace t = parse_trace(read_file(dir / (row.id + ".trace")),
                          manifest.trace_length);
    if (t.id != row.id)
      throw ParseError("io: trace file id '" + t.id +
                       "' does not match manifest id '" + row.id + "'");
    if (t.label != row.label)
      throw ParseError("io: trace '" + row.id + "' label " +
                       std::string(to_string(t.label)) +
                       " does not match manifest label " +
                       std::string(to_string(row.label)));
    dataset.traces.push_back(std::move(t));
  }
  return dataset;
}

}  // namespace linksight
