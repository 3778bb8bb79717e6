#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/io_util.hpp"

namespace mfm {

// A 2-D sea-ice-concentration field, values in [0,1] (fraction of cell
// covered by ice). Optional nodata mask marks land/invalid cells.
struct SicGrid {
  int height = 0;
  int width = 0;
  double cell_size_km = 6.25;
  std::vector<double> values;       // row-major
  std::vector<std::uint8_t> mask;   // empty = no mask; nonzero = nodata

  SicGrid() = default;
  SicGrid(int h, int w, double v = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, v) {}

  bool has_mask() const { return !mask.empty(); }

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }

  bool masked(int y, int x) const {
    return has_mask() && mask[static_cast<std::size_t>(y) * width + x] != 0;
  }

  void validate() const {
    if (values.size() != static_cast<std::size_t>(height) * width)
      throw ShapeError("grid: value count does not match dims");
    if (has_mask() && mask.size() != values.size())
      throw ShapeError("grid: mask shape does not match values");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (has_mask() && mask[i]) continue;
      if (!(values[i] >= 0.0 && values[i] <= 1.0))
        throw FormatError("grid: value out of [0,1] at index " + std::to_string(i));
    }
  }
};

enum class GridFormat { pgm16, flat_f32, csv };

inline GridFormat format_from_path(const std::string& path) {
  auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "pgm") return GridFormat::pgm16;
  if (ext == "f32" || ext == "bin") return GridFormat::flat_f32;
  if (ext == "csv") return GridFormat::csv;
  throw ParamError("cannot infer grid format from path: " + path);
}

namespace detail {

// PGM header token reader that skips whitespace and '#' comments; returns
// the comment lines so cell_size_km metadata survives a round trip.
struct PgmHeader {
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
  double cell_size_km = 6.25;
};

inline PgmHeader parse_pgm_header(const std::string& bytes) {
  PgmHeader h;
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError("pgm: " + msg + " at byte " + std::to_string(pos));
  };
  auto skip_ws = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        std::size_t eol = bytes.find('\n', pos);
        if (eol == std::string::npos) eol = bytes.size();
        const std::string comment = bytes.substr(pos + 1, eol - pos - 1);
        std::istringstream cs(comment);
        std::string key;
        double v;
        if (cs >> key >> v && key == "cell_size_km") h.cell_size_km = v;
        pos = eol;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() {
    skip_ws();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      fail("expected integer");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + (bytes[pos++] - '0');
    return static_cast<int>(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (P5)");
  pos = 2;
  h.width = read_int();
  h.height = read_int();
  h.maxval = read_int();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    fail("expected single whitespace after maxval");
  ++pos;
  h.data_offset = pos;
  if (h.width <= 0 || h.height <= 0) fail("non-positive dimensions");
  if (h.maxval < 256 || h.maxval > 65535)
    throw FormatError("pgm: expected 16-bit maxval in [256,65535], got " +
                      std::to_string(h.maxval));
  return h;
}

}  // namespace detail

// Loads a grid, rescaling to [0,1]: pgm16 divides by maxval, flat_f32 holds
// percent and divides by 100, csv holds fractions directly. Values that land
// outside [0,1] are clamped and counted into *clamped when given.
inline SicGrid load_grid(const std::string& path, GridFormat fmt,
                         int* clamped = nullptr) {
  int clamp_count = 0;
  auto clampv = [&](double v) {
    if (v < 0.0) {
      ++clamp_count;
      return 0.0;
    }
    if (v > 1.0) {
      ++clamp_count;
      return 1.0;
    }
    return v;
  };

  SicGrid g;
  switch (fmt) {
    case GridFormat::pgm16: {
      const std::string bytes = detail::read_file_bytes(path);
      if (bytes.empty()) throw ParseError("pgm: empty file at byte 0");
      const auto h = detail::parse_pgm_header(bytes);
      const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 2;
      if (bytes.size() - h.data_offset < need)
        throw ParseError("pgm: truncated pixel data at byte " +
                         std::to_string(bytes.size()));
      g.height = h.height;
      g.width = h.width;
      g.cell_size_km = h.cell_size_km;
      g.values.resize(static_cast<std::size_t>(h.width) * h.height);
      const unsigned char* p =
          reinterpret_cast<const unsigned char*>(bytes.data()) + h.data_offset;
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        const unsigned v = (static_cast<unsigned>(p[2 * i]) << 8) | p[2 * i + 1];
        g.values[i] = clampv(static_cast<double>(v) / h.maxval);
      }
      break;
    }
    case GridFormat::flat_f32: {
      const std::string hdr = detail::read_file_bytes(path + ".hdr");
      std::istringstream hs(hdr);
      int w = 0, hh = 0;
      double cell = 6.25;
      if (!(hs >> w >> hh >> cell) || w <= 0 || hh <= 0)
        throw ParseError("flat_f32: bad sidecar header " + path + ".hdr at byte 0");
      const std::string bytes = detail::read_file_bytes(path);
      const std::size_t need = static_cast<std::size_t>(w) * hh * 4;
      if (bytes.size() != need)
        throw FormatError("flat_f32: declared dims " + std::to_string(w) + "x" +
                          std::to_string(hh) + " need " + std::to_string(need) +
                          " bytes, file has " + std::to_string(bytes.size()));
      g.height = hh;
      g.width = w;
      g.cell_size_km = cell;
      g.values.resize(static_cast<std::size_t>(w) * hh);
      const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
      bool any_mask = false;
      std::vector<std::uint8_t> mask(g.values.size(), 0);
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        const float v = detail::get_f32_le(p + 4 * i);
        if (std::isnan(v)) {
          mask[i] = 1;
          any_mask = true;
          g.values[i] = 0.0;
        } else {
          g.values[i] = clampv(static_cast<double>(v) / 100.0);
        }
      }
      if (any_mask) g.mask = std::move(mask);
      break;
    }
    case GridFormat::csv: {
      const std::string bytes = detail::read_file_bytes(path);
      if (bytes.empty()) throw ParseError("csv: empty file at byte 0");
      std::istringstream ss(bytes);
      std::string line;
      std::vector<double> vals;
      std::vector<std::uint8_t> mask;
      bool any_mask = false;
      int w = -1, row = 0;
      std::size_t consumed = 0;
      while (std::getline(ss, line)) {
        if (line.empty()) {
          consumed += 1;
          continue;
        }
        std::istringstream ls(line);
        std::string cell;
        int count = 0;
        while (std::getline(ls, cell, ',')) {
          if (cell == "nan" || cell == "NaN") {
            vals.push_back(0.0);
            mask.push_back(1);
            any_mask = true;
          } else {
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str())
              throw ParseError("csv: bad number '" + cell + "' at byte " +
                               std::to_string(consumed));
            vals.push_back(clampv(v));
            mask.push_back(0);
          }
          ++count;
        }
        if (w < 0)
          w = count;
        else if (count != w)
          throw FormatError("csv: row " + std::to_string(row) + " has " +
                            std::to_string(count) + " cells, expected " +
                            std::to_string(w));
        ++row;
        consumed += line.size() + 1;
      }
      if (w <= 0 || row == 0) throw ParseError("csv: no data rows at byte 0");
      g.height = row;
      g.width = w;
      g.values = std::move(vals);
      if (any_mask) g.mask = std::move(mask);
      break;
    }
  }
  if (clamped) *clamped = clamp_count;
  g.validate();
  return g;
}

// Inverse of load_grid's rescale. Deterministic bytes for identical grids.
inline void save_grid(const SicGrid& g, const std::string& path, GridFormat fmt) {
  g.validate();
  switch (fmt) {
    case GridFormat::pgm16: {
      std::string out = "P5\n# cell_size_km ";
      {
        std::ostringstream cs;
        cs << g.cell_size_km;
        out += cs.str();
      }
      out += "\n" + std::to_string(g.width) + " " + std::to_string(g.height) +
             "\n65535\n";
      out.reserve(out.size() + g.values.size() * 2);
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        const double v = (g.has_mask() && g.mask[i]) ? 0.0 : g.values[i];
        const unsigned s = static_cast<unsigned>(std::lround(v * 65535.0));
        out.push_back(static_cast<char>((s >> 8) & 0xff));
        out.push_back(static_cast<char>(s & 0xff));
      }
      detail::write_file_bytes(path, out);
      break;
    }
    case GridFormat::flat_f32: {
      std::string out;
      out.reserve(g.values.size() * 4);
      for (std::size_t i = 0; i < g.values.size(); ++i) {
        if (g.has_mask() && g.mask[i])
          detail::put_f32_le(out, std::numeric_limits<float>::quiet_NaN());
        else
          detail::put_f32_le(out, static_cast<float>(g.values[i] * 100.0));
      }
      detail::write_file_bytes(path, out);
      std::ostringstream hs;
      hs << g.width << " " << g.height << " " << g.cell_size_km << "\n";
      detail::write_file_bytes(path + ".hdr", hs.str());
      break;
    }
    case GridFormat::csv: {
      std::ostringstream out;
      out.precision(9);
      for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
          if (x) out << ',';
          if (g.masked(y, x))
            out << "nan";
          else
            out << g.at(y, x);
        }
        out << '\n';
      }
      detail::write_file_bytes(path, out.str());
      break;
    }
  }
}

}  // namespace mfm
