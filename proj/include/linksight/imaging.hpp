#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/trace.hpp"
#include "linksight/util.hpp"

namespace linksight {

enum class ImageKind { RP, RP_BINARY, GASF, GADF, SNAPSHOT };

inline std::string_view to_string(ImageKind k) {
  switch (k) {
    case ImageKind::RP: return "rp";
    case ImageKind::RP_BINARY: return "rp-binary";
    case ImageKind::GASF: return "gasf";
    case ImageKind::GADF: return "gadf";
    case ImageKind::SNAPSHOT: return "snapshot";
  }
  return "rp";
}

inline ImageKind image_kind_from_string(std::string_view s) {
  if (s == "rp") return ImageKind::RP;
  if (s == "rp-binary") return ImageKind::RP_BINARY;
  if (s == "gasf") return ImageKind::GASF;
  if (s == "gadf") return ImageKind::GADF;
  if (s == "snapshot") return ImageKind::SNAPSHOT;
  throw ParameterError("imaging: unknown transform kind '" + std::string(s) + "'");
}

/// Square image produced by a time-series transform. Row 0 corresponds to
/// the earliest sample; writers emit row 0 first. (The usual recurrence-plot
/// rendering puts the earliest sample at the bottom, which is purely a
/// display choice.)
struct ImageMatrix {
  int size = 0;
  std::vector<double> cells;  // row-major, size*size
  ImageKind kind = ImageKind::RP;

  double& at(int i, int j) { return cells[static_cast<std::size_t>(i) * size + j]; }
  double at(int i, int j) const { return cells[static_cast<std::size_t>(i) * size + j]; }

  friend bool operator==(const ImageMatrix&, const ImageMatrix&) = default;
};

/// Recurrence plot. By default the raw pairwise distance matrix
/// |s_i - s_j|; with `binarize` the Heaviside threshold image
/// step(epsilon - |s_i - s_j|) instead.
inline ImageMatrix recurrence_plot(std::span<const double> values,
                                   std::optional<double> epsilon = std::nullopt,
                                   bool binarize = false) {
  int n = static_cast<int>(values.size());
  if (n < 2) throw ParameterError("imaging: recurrence plot needs length >= 2");
  if (binarize && !epsilon)
    throw ParameterError("imaging: binarized recurrence plot needs epsilon");
  ImageMatrix m;
  m.size = n;
  m.kind = binarize ? ImageKind::RP_BINARY : ImageKind::RP;
  m.cells.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    m.at(i, i) = binarize ? 1.0 : 0.0;
    for (int j = i + 1; j < n; ++j) {
      double d = std::abs(values[static_cast<std::size_t>(i)] -
                          values[static_cast<std::size_t>(j)]);
      double cell = binarize ? (*epsilon - d >= 0.0 ? 1.0 : 0.0) : d;
      m.at(i, j) = cell;
      m.at(j, i) = cell;
    }
  }
  return m;
}

/// Min-max rescaling into [-1, 1]; a constant series maps to all zeros.
inline std::vector<double> minmax_rescale(std::span<const double> values) {
  if (values.empty()) throw ParameterError("imaging: empty series");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(values.size());
  if (lo == hi) return out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = 2.0 * (values[i] - lo) / (hi - lo) - 1.0;
  return out;
}

namespace detail {

inline std::vector<double> polar_angles(std::span<const double> values) {
  std::vector<double> scaled = minmax_rescale(values);
  for (double& v : scaled) v = std::acos(std::clamp(v, -1.0, 1.0));
  return scaled;
}

}  // namespace detail

/// Gramian angular summation field: cos(phi_i + phi_j) over the polar
/// angles phi = arccos of the rescaled series. Symmetric by construction.
inline ImageMatrix gasf(std::span<const double> values) {
  int n = static_cast<int>(values.size());
  if (n < 2) throw ParameterError("imaging: gasf needs length >= 2");
  std::vector<double> phi = detail::polar_angles(values);
  ImageMatrix m;
  m.size = n;
  m.kind = ImageKind::GASF;
  m.cells.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      double cell = std::clamp(
          std::cos(phi[static_cast<std::size_t>(i)] + phi[static_cast<std::size_t>(j)]),
          -1.0, 1.0);
      m.at(i, j) = cell;
      m.at(j, i) = cell;
    }
  return m;
}

/// Gramian angular difference field: sin(phi_i - phi_j). Antisymmetric with
/// an exactly zero diagonal.
inline ImageMatrix gadf(std::span<const double> values) {
  int n = static_cast<int>(values.size());
  if (n < 2) throw ParameterError("imaging: gadf needs length >= 2");
  std::vector<double> phi = detail::polar_angles(values);
  ImageMatrix m;
  m.size = n;
  m.kind = ImageKind::GADF;
  m.cells.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    m.at(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      double cell = std::clamp(
          std::sin(phi[static_cast<std::size_t>(i)] - phi[static_cast<std::size_t>(j)]),
          -1.0, 1.0);
      m.at(i, j) = cell;
      m.at(j, i) = -cell;
    }
  }
  return m;
}

/// Raster of the raw series: column x carries a single 1 at the row for
/// value s_x, linearly quantized over the RSSI range with the highest value
/// in row 0. A full-range ramp therefore draws the matrix anti-diagonal.
inline ImageMatrix ts_snapshot(std::span<const double> values,
                               double lo = kRssiFloor, double hi = kRssiCeil) {
  int n = static_cast<int>(values.size());
  if (n < 2) throw ParameterError("imaging: snapshot needs length >= 2");
  if (!(hi > lo)) throw ParameterError("imaging: snapshot needs hi > lo");
  ImageMatrix m;
  m.size = n;
  m.kind = ImageKind::SNAPSHOT;
  m.cells.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int x = 0; x < n; ++x) {
    double v = std::clamp(values[static_cast<std::size_t>(x)], lo, hi);
    int row = (n - 1) - static_cast<int>(std::lround((v - lo) / (hi - lo) * (n - 1)));
    m.at(row, x) = 1.0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Export: binary PGM (P5) with a linear min-max mapping to [0, 255], and
// full-precision CSV with row 0 (earliest sample) first.
// ---------------------------------------------------------------------------

enum class ImageFormat { PGM, CSV };

inline ImageFormat image_format_from_string(std::string_view s) {
  if (s == "pgm") return ImageFormat::PGM;
  if (s == "csv") return ImageFormat::CSV;
  throw ParameterError("imaging: unknown image format '" + std::string(s) + "'");
}

namespace detail {

inline void write_pgm(std::ostream& out, int rows, int cols,
                      const double* cells) {
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  double lo = cells[0], hi = cells[0];
  for (std::size_t i = 1; i < count; ++i) {
    lo = std::min(lo, cells[i]);
    hi = std::max(hi, cells[i]);
  }
  out << "P5\n" << cols << " " << rows << "\n255\n";
  std::string bytes(count, '\0');
  if (hi > lo)
    for (std::size_t i = 0; i < count; ++i)
      bytes[i] = static_cast<char>(static_cast<unsigned char>(
          std::lround((cells[i] - lo) / (hi - lo) * 255.0)));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline void write_csv(std::ostream& out, int rows, int cols,
                      const double* cells) {
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (j) out << ",";
      out << format_double(cells[static_cast<std::size_t>(i) * cols + j]);
    }
    out << "\n";
  }
}

}  // namespace detail

inline void export_image(std::ostream& out, const ImageMatrix& m,
                         ImageFormat format) {
  if (m.size < 1 || m.cells.size() != static_cast<std::size_t>(m.size) * m.size)
    throw ShapeError("imaging: malformed image matrix");
  switch (format) {
    case ImageFormat::PGM:
      detail::write_pgm(out, m.size, m.size, m.cells.data());
      return;
    case ImageFormat::CSV:
      detail::write_csv(out, m.size, m.size, m.cells.data());
      return;
  }
  throw ParameterError("imaging: unknown image format");
}

inline std::string export_image(const ImageMatrix& m, ImageFormat format) {
  std::ostringstream out;
  export_image(out, m, format);
  return out.str();
}

/// Reads a square CSV matrix back; the inverse of the CSV export.
inline ImageMatrix parse_csv_matrix(std::istream& in,
                                    ImageKind kind = ImageKind::RP) {
  ImageMatrix m;
  m.kind = kind;
  std::string line;
  long line_no = 0;
  std::size_t cols = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    auto fields = split(view, ',');
    if (cols == 0) cols = fields.size();
    if (fields.size() != cols)
      throw ParseError("imaging: csv line " + std::to_string(line_no) +
                       ": ragged row");
    for (auto f : fields)
      m.cells.push_back(parse_double(trim(f), "imaging: csv line " +
                                                  std::to_string(line_no)));
  }
  std::size_t rows = cols == 0 ? 0 : m.cells.size() / cols;
  if (rows == 0 || rows != cols)
    throw ParseError("imaging: csv matrix is not square");
  m.size = static_cast<int>(cols);
  return m;
}

inline ImageMatrix parse_csv_matrix(std::string_view text,
                                    ImageKind kind = ImageKind::RP) {
  std::istringstream in{std::string(text)};
  return parse_csv_matrix(in, kind);
}

/// Dispatch helper used by the transform pipeline and the CLI.
inline ImageMatrix transform(std::span<const double> values, ImageKind kind,
                             std::optional<double> epsilon = std::nullopt) {
  switch (kind) {
    case ImageKind::RP: return recurrence_plot(values);
    case ImageKind::RP_BINARY: return recurrence_plot(values, epsilon, true);
    case ImageKind::GASF: return gasf(values);
    case ImageKind::GADF: return gadf(values);
    case ImageKind::SNAPSHOT: return ts_snapshot(values);
  }
  throw ParameterError("imaging: unknown transform kind");
}

}  // namespace linksight
