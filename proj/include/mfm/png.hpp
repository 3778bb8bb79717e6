#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/grid.hpp"
#include "mfm/io_util.hpp"

namespace mfm {

// Minimal 8-bit grayscale PNG writer/reader (zlib for deflate and crc32).
// Enough for previews and for reading back what we write; the reader also
// handles all five scanline filters of standard non-interlaced gray8 files.

namespace detail {

inline void put_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline std::uint32_t get_u32_be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) |
         (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

inline void put_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.append(type, 4);
  out += data;
  const auto crc =
      crc32(0, reinterpret_cast<const Bytef*>(out.data() + start),
            static_cast<uInt>(4 + data.size()));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

inline int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace detail

inline void write_png_gray8(const std::string& path, int width, int height,
                            const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != static_cast<std::size_t>(width) * height)
    throw ShapeError("png: pixel count does not match dims");

  std::string out("\x89PNG\r\n\x1a\n", 8);

  std::string ihdr;
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(width));
  detail::put_u32_be(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);   // deflate
  ihdr.push_back(0);   // adaptive filtering
  ihdr.push_back(0);   // no interlace
  detail::put_chunk(out, "IHDR", ihdr);

  std::vector<unsigned char> raw(static_cast<std::size_t>(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw[static_cast<std::size_t>(y) * (width + 1)] = 0;  // filter: none
    std::memcpy(raw.data() + static_cast<std::size_t>(y) * (width + 1) + 1,
                pixels.data() + static_cast<std::size_t>(y) * width, width);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IoError("png: deflate failed");
  detail::put_chunk(out, "IDAT",
                    std::string(reinterpret_cast<char*>(compressed.data()), bound));
  detail::put_chunk(out, "IEND", "");

  detail::write_file_bytes(path, out);
}

struct PngImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

inline PngImage read_png_gray8(const std::string& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
    throw ParseError("png: bad signature at byte 0");

  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = 8;
  PngImage img;
  std::string idat;
  bool seen_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = detail::get_u32_be(p + pos);
    if (pos + 12 + len > bytes.size())
      throw ParseError("png: truncated chunk at byte " + std::to_string(pos));
    const std::string type(bytes.data() + pos + 4, 4);
    const unsigned char* data = p + pos + 8;
    if (type == "IHDR") {
      img.width = static_cast<int>(detail::get_u32_be(data));
      img.height = static_cast<int>(detail::get_u32_be(data + 4));
      if (data[8] != 8 || data[9] != 0 || data[12] != 0)
        throw FormatError("png: only non-interlaced 8-bit grayscale supported");
      seen_ihdr = true;
    } else if (type == "IDAT") {
      idat.append(reinterpret_cast<const char*>(data), len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || img.width <= 0 || img.height <= 0)
    throw ParseError("png: missing IHDR");

  const std::size_t stride = img.width + 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.height) * stride);
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw ParseError("png: corrupt IDAT stream");

  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  std::vector<unsigned char> prev(img.width, 0);
  for (int y = 0; y < img.height; ++y) {
    const unsigned char filter = raw[static_cast<std::size_t>(y) * stride];
    unsigned char* row = raw.data() + static_cast<std::size_t>(y) * stride + 1;
    for (int x = 0; x < img.width; ++x) {
      const int a = x > 0 ? row[x - 1] : 0;
      const int b = prev[x];
      const int c = x > 0 ? prev[x - 1] : 0;
      int v = row[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw FormatError("png: unknown filter " + std::to_string(filter));
      }
      row[x] = static_cast<unsigned char>(v & 0xff);
    }
    std::memcpy(img.pixels.data() + static_cast<std::size_t>(y) * img.width, row,
                img.width);
    std::memcpy(prev.data(), row, img.width);
  }
  return img;
}

// Quantize a [0,1] grid to 8 bits (v*255, round).
inline std::vector<std::uint8_t> grid_to_gray8(const SicGrid& g) {
  std::vector<std::uint8_t> px(g.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = g.values[i] < 0.0 ? 0.0 : (g.values[i] > 1.0 ? 1.0 : g.values[i]);
    px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return px;
}

// Horizontal (left | right) composite with a thin white separator.
inline void write_png_side_by_side(const std::string& path, const SicGrid& left,
                                   const SicGrid& right, int gap = 2) {
  if (left.height != right.height)
    throw ShapeError("png composite: heights differ");
  const int w = left.width + gap + right.width;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(left.height) * w, 255);
  const auto lp = grid_to_gray8(left);
  const auto rp = grid_to_gray8(right);
  for (int y = 0; y < left.height; ++y) {
    std::memcpy(px.data() + static_cast<std::size_t>(y) * w,
                lp.data() + static_cast<std::size_t>(y) * left.width, left.width);
    std::memcpy(px.data() + static_cast<std::size_t>(y) * w + left.width + gap,
                rp.data() + static_cast<std::size_t>(y) * right.width, right.width);
  }
  write_png_gray8(path, w, left.height, px);
}

}  // namespace mfm
