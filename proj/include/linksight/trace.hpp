#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/rng.hpp"
#include "linksight/util.hpp"

namespace linksight {

inline constexpr double kRssiFloor = 0.0;
inline constexpr double kRssiCeil = 127.0;
inline constexpr int kDefaultTraceLength = 300;

/// The four link-layer anomaly shapes plus the normal class.
enum class AnomalyKind { SuddenD = 0, SuddenR = 1, InstaD = 2, SlowD = 3, None = 4 };

inline constexpr std::array<AnomalyKind, 4> kAnomalyKinds = {
    AnomalyKind::SuddenD, AnomalyKind::SuddenR, AnomalyKind::InstaD,
    AnomalyKind::SlowD};

inline std::string_view to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::SuddenD: return "SuddenD";
    case AnomalyKind::SuddenR: return "SuddenR";
    case AnomalyKind::InstaD: return "InstaD";
    case AnomalyKind::SlowD: return "SlowD";
    case AnomalyKind::None: return "None";
  }
  return "None";
}

inline AnomalyKind anomaly_kind_from_string(std::string_view s) {
  if (s == "SuddenD") return AnomalyKind::SuddenD;
  if (s == "SuddenR") return AnomalyKind::SuddenR;
  if (s == "InstaD") return AnomalyKind::InstaD;
  if (s == "SlowD") return AnomalyKind::SlowD;
  if (s == "None") return AnomalyKind::None;
  throw ParseError("traces: unknown anomaly kind '" + std::string(s) + "'");
}

/// One link's RSSI sequence. `values[k]` is the RSSI of sequence number k.
/// A trace parsed from a record stream with missing sequence numbers keeps
/// the gaps filled with the floor value and carries `lossy = true`.
struct Trace {
  std::string id;
  std::vector<double> values;
  int src_node = 0;
  int dst_node = 0;
  int noise_level = 0;
  AnomalyKind label = AnomalyKind::None;
  bool lossy = false;

  int length() const { return static_cast<int>(values.size()); }

  friend bool operator==(const Trace& a, const Trace& b) = default;
};

struct LabeledDataset {
  std::vector<Trace> traces;
  int trace_length = kDefaultTraceLength;
  std::uint64_t seed = 0;
  std::string provenance;
};

// ---------------------------------------------------------------------------
// Trace file format: '#'-prefixed key=value header lines followed by one
// record per line, "seq,rssi". ASCII, LF line endings, sequence numbers in
// base 10 starting at 0.
// ---------------------------------------------------------------------------

inline void serialize_trace(std::ostream& out, const Trace& trace) {
  out << "# id=" << trace.id << "\n";
  out << "# src=" << trace.src_node << "\n";
  out << "# dst=" << trace.dst_node << "\n";
  out << "# noise=" << trace.noise_level << "\n";
  out << "# label=" << to_string(trace.label) << "\n";
  for (std::size_t k = 0; k < trace.values.size(); ++k)
    out << k << "," << format_double(trace.values[k]) << "\n";
}

inline std::string serialize_trace(const Trace& trace) {
  std::ostringstream out;
  serialize_trace(out, trace);
  return out.str();
}

/// Parses one trace from a record stream. Sequence numbers must be strictly
/// increasing; a skipped number marks the trace lossy. When
/// `expected_length` is given, traces shorter than it are floor-padded and
/// marked lossy, and records beyond it are rejected.
inline Trace parse_trace(std::istream& in,
                         std::optional<int> expected_length = std::nullopt) {
  Trace trace;
  std::string line;
  long line_no = 0;
  long long prev_seq = -1;
  bool gap = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::string where = "traces: line " + std::to_string(line_no);
    if (view.front() == '#') {
      view.remove_prefix(1);
      view = trim(view);
      std::size_t eq = view.find('=');
      if (eq == std::string_view::npos)
        throw ParseError(where + ": header without '='");
      std::string_view key = trim(view.substr(0, eq));
      std::string_view value = trim(view.substr(eq + 1));
      if (key == "id")
        trace.id = std::string(value);
      else if (key == "src")
        trace.src_node = static_cast<int>(parse_int(value, where));
      else if (key == "dst")
        trace.dst_node = static_cast<int>(parse_int(value, where));
      else if (key == "noise")
        trace.noise_level = static_cast<int>(parse_int(value, where));
      else if (key == "label")
        trace.label = anomaly_kind_from_string(value);
      else
        throw ParseError(where + ": unknown header key '" + std::string(key) + "'");
      continue;
    }
    std::size_t comma = view.find(',');
    if (comma == std::string_view::npos)
      throw ParseError(where + ": record without ','");
    long long seq = parse_int(trim(view.substr(0, comma)), where);
    double rssi = parse_double(trim(view.substr(comma + 1)), where);
    if (seq <= prev_seq)
      throw ParseError(where + ": sequence numbers must be strictly increasing");
    if (rssi < kRssiFloor || rssi > kRssiCeil)
      throw ParseError(where + ": rssi " + format_double(rssi) +
                       " outside [" + format_double(kRssiFloor) + ", " +
                       format_double(kRssiCeil) + "]");
    if (expected_length && seq >= *expected_length)
      throw ParseError(where + ": sequence number " + std::to_string(seq) +
                       " beyond expected length " +
                       std::to_string(*expected_length));
    if (seq > prev_seq + 1) gap = true;
    trace.values.resize(static_cast<std::size_t>(seq) + 1, kRssiFloor);
    trace.values.back() = rssi;
    prev_seq = seq;
  }
  if (prev_seq < 0) throw ParseError("traces: no records found");
  if (expected_length && trace.length() < *expected_length) {
    trace.values.resize(static_cast<std::size_t>(*expected_length), kRssiFloor);
    gap = true;
  }
  trace.lossy = gap;
  return trace;
}

inline Trace parse_trace(std::string_view text,
                         std::optional<int> expected_length = std::nullopt) {
  std::istringstream in{std::string(text)};
  return parse_trace(in, expected_length);
}

/// Keeps traces whose lossy flag is false. `invert` keeps the lossy ones
/// instead (see the packet-loss filter flag on the ingest command).
inline std::vector<Trace> filter_complete(std::span<const Trace> traces,
                                          bool invert = false) {
  std::vector<Trace> out;
  out.reserve(traces.size());
  for (const Trace& t : traces)
    if (t.lossy == invert) out.push_back(t);
  return out;
}

inline std::vector<Trace> filter_complete(const std::vector<Trace>& traces,
                                          bool invert = false) {
  return filter_complete(std::span<const Trace>(traces), invert);
}

/// Stand-in for a measurement campaign: `count` stationary Gaussian traces
/// around `mean`, clamped into the RSSI range. Per-trace seeds are derived
/// from (seed, index), so generation order never changes the output.
inline LabeledDataset generate_synthetic_normal(int count, int length,
                                                double mean, double stddev,
                                                std::uint64_t seed) {
  if (count < 1) throw ParameterError("traces: count must be >= 1");
  if (length < 8) throw ParameterError("traces: length must be >= 8");
  if (stddev < 0.0) throw ParameterError("traces: stddev must be >= 0");
  LabeledDataset dataset;
  dataset.trace_length = length;
  dataset.seed = seed;
  dataset.provenance = "generate count=" + std::to_string(count) +
                       " length=" + std::to_string(length) +
                       " mean=" + format_double(mean) +
                       " stddev=" + format_double(stddev);
  dataset.traces.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Trace& t = dataset.traces[static_cast<std::size_t>(i)];
    char buf[32];
    std::snprintf(buf, sizeof buf, "normal_%05d", i);
    t.id = buf;
    t.label = AnomalyKind::None;
    t.values.resize(static_cast<std::size_t>(length));
    Rng rng(derive_seed(seed, "normal-trace", static_cast<std::uint64_t>(i)));
    for (double& v : t.values)
      v = std::clamp(rng.normal(mean, stddev), kRssiFloor, kRssiCeil);
  }
  return dataset;
}

// ---------------------------------------------------------------------------
// Dataset manifest: '#'-prefixed header (trace_length, seed, provenance),
// a column header, then one "id,label,seed_offset" row per trace.
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string id;
  AnomalyKind label;
  std::uint64_t seed_offset;
};

struct Manifest {
  int trace_length = kDefaultTraceLength;
  std::uint64_t seed = 0;
  std::string provenance;
  std::vector<ManifestRow> rows;
};

inline void write_manifest(std::ostream& out, const LabeledDataset& dataset) {
  out << "# trace_length=" << dataset.trace_length << "\n";
  out << "# seed=" << dataset.seed << "\n";
  out << "# provenance=" << dataset.provenance << "\n";
  out << "id,label,seed_offset\n";
  for (std::size_t i = 0; i < dataset.traces.size(); ++i)
    out << dataset.traces[i].id << "," << to_string(dataset.traces[i].label)
        << "," << i << "\n";
}

inline Manifest parse_manifest(std::istream& in) {
  Manifest manifest;
  std::string line;
  long line_no = 0;
  bool saw_columns = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::string where = "traces: manifest line " + std::to_string(line_no);
    if (view.front() == '#') {
      view.remove_prefix(1);
      view = trim(view);
      std::size_t eq = view.find('=');
      if (eq == std::string_view::npos)
        throw ParseError(where + ": header without '='");
      std::string_view key = trim(view.substr(0, eq));
      std::string_view value = trim(view.substr(eq + 1));
      if (key == "trace_length")
        manifest.trace_length = static_cast<int>(parse_int(value, where));
      else if (key == "seed")
        manifest.seed = static_cast<std::uint64_t>(parse_int(value, where));
      else if (key == "provenance")
        manifest.provenance = std::string(value);
      else
        throw ParseError(where + ": unknown header key '" + std::string(key) + "'");
      continue;
    }
    if (!saw_columns) {
      if (view != "id,label,seed_offset")
        throw ParseError(where + ": expected column header 'id,label,seed_offset'");
      saw_columns = true;
      continue;
    }
    auto fields = split(view, ',');
    if (fields.size() != 3) throw ParseError(where + ": expected 3 fields");
    ManifestRow row;
    row.id = std::string(trim(fields[0]));
    row.label = anomaly_kind_from_string(trim(fields[1]));
    row.seed_offset = static_cast<std::uint64_t>(parse_int(trim(fields[2]), where));
    manifest.rows.push_back(std::move(row));
  }
  if (!saw_columns) throw ParseError("traces: manifest has no column header");
  return manifest;
}

}  // namespace linksight
