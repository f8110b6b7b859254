#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mseg/errors.hpp"
#include "mseg/image.hpp"
#include "mseg/imageio.hpp"

namespace mseg {

struct PixelPos {
  int row = 0;
  int col = 0;
  friend bool operator==(const PixelPos&, const PixelPos&) = default;
  friend auto operator<=>(const PixelPos&, const PixelPos&) = default;
};

struct Contour {
  int class_id = 0;
  std::vector<PixelPos> vertices;
  bool closed = true;
};

namespace detail {

// Clockwise on screen (row grows downward), starting east.
inline constexpr std::array<PixelPos, 8> kMoore{{
    {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}}};

inline int direction_of(PixelPos from, PixelPos to) {
  const PixelPos d{to.row - from.row, to.col - from.col};
  for (int i = 0; i < 8; ++i) {
    if (kMoore[i] == d) return i;
  }
  throw InvalidArgument("direction_of: pixels are not 8-adjacent");
}

// Outer border of the 8-connected region containing `start`, clockwise. `start`
// must be the region's first pixel in raster order.
template <class Inside>
std::vector<PixelPos> trace_outer_border(PixelPos start, const Inside& inside) {
  const auto at = [&](PixelPos p, int dir) {
    return PixelPos{p.row + kMoore[dir].row, p.col + kMoore[dir].col};
  };
  // Last pixel of the clockwise walk: first region pixel counter-clockwise from west.
  int dir = 4;
  int found = -1;
  for (int i = 0; i < 8; ++i) {
    const int d = (dir - i + 8) % 8;
    if (inside(at(start, d))) {
      found = d;
      break;
    }
  }
  if (found < 0) return {start};
  const PixelPos last = at(start, found);

  std::vector<PixelPos> out{start};
  PixelPos prev = last, cur = start;
  for (;;) {
    // Clockwise from the element after `prev`.
    const int from = direction_of(cur, prev);
    PixelPos next = cur;
    for (int i = 1; i <= 8; ++i) {
      const PixelPos cand = at(cur, (from + i) % 8);
      if (inside(cand)) {
        next = cand;
        break;
      }
    }
    if (next == start && cur == last) break;
    out.push_back(next);
    prev = cur;
    cur = next;
  }
  return out;
}

}  // namespace detail

// 8-connected component labels (0 = not the class, components numbered from 1
// in raster order of their first pixel).
inline std::vector<int> label_components(const LabelMask& mask, int class_id, int* count = nullptr) {
  const int h = mask.height(), w = mask.width();
  std::vector<int> labels(static_cast<std::size_t>(h) * w, 0);
  int next = 0;
  std::vector<PixelPos> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (mask(r, c) != class_id || labels[r * w + c] != 0) continue;
      labels[r * w + c] = ++next;
      stack.push_back({r, c});
      while (!stack.empty()) {
        const PixelPos p = stack.back();
        stack.pop_back();
        for (const auto& d : detail::kMoore) {
          const int rr = p.row + d.row, cc = p.col + d.col;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (mask(rr, cc) != class_id || labels[rr * w + cc] != 0) continue;
          labels[rr * w + cc] = next;
          stack.push_back({rr, cc});
        }
      }
    }
  }
  if (count) *count = next;
  return labels;
}

// One clockwise outer contour per 8-connected component of `class_id`; holes ignored.
inline std::vector<Contour> extract_contours(const LabelMask& mask, int class_id) {
  if (class_id < 0 || class_id >= mask.num_classes()) {
    throw InvalidArgument("extract_contours: class id out of range");
  }
  const int h = mask.height(), w = mask.width();
  int count = 0;
  const std::vector<int> labels = label_components(mask, class_id, &count);
  std::vector<Contour> out;
  out.reserve(count);
  int seen = 0;
  for (int r = 0; r < h && seen < count; ++r) {
    for (int c = 0; c < w; ++c) {
      const int id = labels[r * w + c];
      if (id != seen + 1) continue;
      ++seen;
      const auto inside = [&](PixelPos p) {
        return p.row >= 0 && p.row < h && p.col >= 0 && p.col < w && labels[p.row * w + p.col] == id;
      };
      out.push_back({class_id, detail::trace_outer_border(PixelPos{r, c}, inside), true});
    }
  }
  return out;
}

// Grayscale replicated to RGB with contour vertices painted in their class colour.
inline RgbImage overlay(const Image& img, const std::vector<Contour>& contours,
                        const std::vector<Rgb>& palette = default_palette()) {
  RgbImage out(img.height(), img.width());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::uint8_t v = io::to_byte(img.data()[i]);
    for (int ch = 0; ch < 3; ++ch) out.plane(ch)[i] = v;
  }
  for (const auto& ct : contours) {
    if (ct.class_id < 0 || ct.class_id >= static_cast<int>(palette.size())) {
      throw InvalidArgument("overlay: no palette entry for class " + std::to_string(ct.class_id));
    }
    const Rgb col = palette[ct.class_id];
    for (const auto& p : ct.vertices) {
      if (p.row < 0 || p.row >= img.height() || p.col < 0 || p.col >= img.width()) {
        throw InvalidArgument("overlay: contour vertex outside image");
      }
      out.at(0, p.row, p.col) = col.r;
      out.at(1, p.row, p.col) = col.g;
      out.at(2, p.row, p.col) = col.b;
    }
  }
  return out;
}

inline nlohmann::json contours_to_json(const std::vector<Contour>& contours,
                                       const std::vector<std::string>& class_names = {
                                           "background", "cell", "bead"}) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& ct : contours) {
    nlohmann::json verts = nlohmann::json::array();
    for (const auto& p : ct.vertices) verts.push_back({p.row, p.col});
    arr.push_back({{"class", ct.class_id < static_cast<int>(class_names.size())
                                 ? class_names[ct.class_id]
                                 : std::to_string(ct.class_id)},
                   {"vertices", std::move(verts)}});
  }
  return arr;
}

// Contours of every non-background class (cells, then beads).
inline std::vector<Contour> extract_object_contours(const LabelMask& mask) {
  std::vector<Contour> all;
  for (int c = 1; c < mask.num_classes(); ++c) {
    auto part = extract_contours(mask, c);
    all.insert(all.end(), part.begin(), part.end());
  }
  return all;
}

}  // namespace mseg
