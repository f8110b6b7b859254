#pragma once

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mseg/errors.hpp"
#include "mseg/image.hpp"

namespace mseg::io {

// Raw 8-bit raster as stored on disk: 1 (gray) or 3 (rgb) channels, interleaved.
struct Bytes8 {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline Bytes8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  detail::skip_pnm_space(in);
  in >> w;
  detail::skip_pnm_space(in);
  in >> h;
  detail::skip_pnm_space(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError(path.string() + ": unsupported PGM header (need 8-bit)");
  }
  in.get();
  Bytes8 b{h, w, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h)};
  in.read(reinterpret_cast<char*>(b.pixels.data()), static_cast<std::streamsize>(b.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(b.pixels.size())) {
    throw DataError(path.string() + ": truncated PGM payload");
  }
  return b;
}

inline void write_pgm(const std::filesystem::path& path, const Bytes8& b) {
  if (b.channels != 1) throw InvalidArgument("PGM output must be single channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << b.width << ' ' << b.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(b.pixels.data()),
            static_cast<std::streamsize>(b.pixels.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

inline Bytes8 read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed");
  }
  Bytes8 b;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  b.width = static_cast<int>(png_get_image_width(png, info));
  b.height = static_cast<int>(png_get_image_height(png, info));
  b.channels = png_get_channels(png, info);
  b.pixels.resize(static_cast<std::size_t>(b.width) * b.height * b.channels);
  rows.resize(b.height);
  for (int r = 0; r < b.height; ++r) {
    rows[r] = b.pixels.data() + static_cast<std::size_t>(r) * b.width * b.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return b;
}

inline void write_png(const std::filesystem::path& path, const Bytes8& b) {
  if (b.channels != 1 && b.channels != 3) throw InvalidArgument("PNG output needs 1 or 3 channels");
  detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng init failed");
  }
  std::vector<png_bytep> rows(b.height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, b.width, b.height, 8,
               b.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < b.height; ++r) {
    rows[r] = const_cast<png_bytep>(b.pixels.data()) +
              static_cast<std::size_t>(r) * b.width * b.channels;
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Dispatches on file signature for reading and on extension for writing.
inline Bytes8 read_bytes(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("no such file: " + path.string());
  return detail::has_png_signature(path) ? read_png(path) : read_pgm(path);
}

inline void write_bytes(const std::filesystem::path& path, const Bytes8& b) {
  if (path.extension() == ".png") {
    write_png(path, b);
  } else {
    write_pgm(path, b);
  }
}

// ---------------------------------------------------------------------------
// Typed conversions

inline Image to_image(const Bytes8& b) {
  Image img(b.height, b.width);
  const std::size_t n = static_cast<std::size_t>(b.height) * b.width;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0;
    if (b.channels == 1) {
      v = b.pixels[i];
    } else {
      // ITU-R BT.601 luma
      v = 0.299 * b.pixels[3 * i] + 0.587 * b.pixels[3 * i + 1] + 0.114 * b.pixels[3 * i + 2];
    }
    img.data()[i] = std::min(1.0, v / 255.0);
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Bytes8 from_image(const Image& img) {
  Bytes8 b{img.height(), img.width(), 1, {}};
  b.pixels.reserve(img.size());
  for (double v : img.data()) b.pixels.push_back(to_byte(v));
  return b;
}

inline LabelMask to_mask(const Bytes8& b, int num_classes = kDefaultNumClasses) {
  if (b.channels != 1) throw DataError("mask files must be single channel");
  for (auto v : b.pixels) {
    if (v >= num_classes) throw DataError("mask contains class id " + std::to_string(v));
  }
  return LabelMask(b.height, b.width, b.pixels, num_classes);
}

inline Bytes8 from_mask(const LabelMask& m) { return {m.height(), m.width(), 1, m.data()}; }

inline Bytes8 from_rgb(const RgbImage& img) {
  Bytes8 b{img.height(), img.width(), 3, {}};
  const std::size_t n = img.plane_size();
  b.pixels.resize(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) b.pixels[3 * i + c] = img.plane(c)[i];
  }
  return b;
}

inline RgbImage colorize(const LabelMask& m, const std::vector<Rgb>& palette = default_palette()) {
  if (static_cast<int>(palette.size()) < m.num_classes()) {
    throw InvalidArgument("palette smaller than class count");
  }
  RgbImage out(m.height(), m.width());
  for (std::size_t i = 0; i < m.plane_size(); ++i) {
    const Rgb c = palette[m.data()[i]];
    out.plane(0)[i] = c.r;
    out.plane(1)[i] = c.g;
    out.plane(2)[i] = c.b;
  }
  return out;
}

inline Image read_image(const std::filesystem::path& p) { return to_image(read_bytes(p)); }
inline void write_image(const std::filesystem::path& p, const Image& img) {
  write_bytes(p, from_image(img));
}
inline LabelMask read_mask(const std::filesystem::path& p, int num_classes = kDefaultNumClasses) {
  return to_mask(read_bytes(p), num_classes);
}
inline void write_mask(const std::filesystem::path& p, const LabelMask& m) {
  write_bytes(p, from_mask(m));
}
inline void write_rgb(const std::filesystem::path& p, const RgbImage& img) {
  write_png(p, from_rgb(img));
}

}  // namespace mseg::io
