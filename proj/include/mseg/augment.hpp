#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "mseg/errors.hpp"
#include "mseg/image.hpp"

namespace mseg {

// Element of D4: index = rotation quarter-turns + 4 * flip.
// Acts on centered coordinates (x right, y down) as R^rot * F^flip, where
// F mirrors x and R maps (x, y) -> (-y, x).
class DihedralElement {
 public:
  constexpr DihedralElement() = default;
  constexpr explicit DihedralElement(int index) : index_(index) {
    if (index < 0 || index > 7) throw InvalidArgument("dihedral index must be in 0..7");
  }
  static constexpr DihedralElement identity() { return DihedralElement(0); }
  static constexpr DihedralElement rotation(int quarter_turns) {
    return DihedralElement(((quarter_turns % 4) + 4) % 4);
  }
  static constexpr DihedralElement flip() { return DihedralElement(4); }

  constexpr int index() const { return index_; }
  constexpr int quarter_turns() const { return index_ % 4; }
  constexpr bool flipped() const { return index_ >= 4; }
  constexpr bool swaps_axes() const { return quarter_turns() % 2 == 1; }

  // 2x2 integer matrix, row-major {m00, m01, m10, m11}.
  constexpr std::array<int, 4> matrix() const {
    std::array<int, 4> m{1, 0, 0, 1};
    if (flipped()) m = {-1, 0, 0, 1};
    for (int k = 0; k < quarter_turns(); ++k) m = {-m[2], -m[3], m[0], m[1]};
    return m;
  }

  static constexpr DihedralElement from_matrix(const std::array<int, 4>& m) {
    for (int i = 0; i < 8; ++i) {
      if (DihedralElement(i).matrix() == m) return DihedralElement(i);
    }
    throw InvalidArgument("matrix is not in D4");
  }

  friend constexpr bool operator==(DihedralElement, DihedralElement) = default;

 private:
  int index_ = 0;
};

// Element whose action equals applying b first, then a.
constexpr DihedralElement compose(DihedralElement a, DihedralElement b) {
  const auto p = a.matrix();
  const auto q = b.matrix();
  return DihedralElement::from_matrix({p[0] * q[0] + p[1] * q[2], p[0] * q[1] + p[1] * q[3],
                                       p[2] * q[0] + p[3] * q[2], p[2] * q[1] + p[3] * q[3]});
}

constexpr DihedralElement inverse(DihedralElement e) {
  const auto m = e.matrix();
  return DihedralElement::from_matrix({m[0], m[2], m[1], m[3]});
}

// Pixel permutation; output dims swap for odd quarter turns.
template <class R>
R apply_dihedral(const R& src, DihedralElement e) {
  const int h = src.height(), w = src.width();
  const int oh = e.swaps_axes() ? w : h;
  const int ow = e.swaps_axes() ? h : w;
  const auto m = e.matrix();
  R out = src.blank(oh, ow);
  for (int r = 0; r < h; ++r) {
    const int y = 2 * r - (h - 1);
    for (int c = 0; c < w; ++c) {
      const int x = 2 * c - (w - 1);
      const int nx = m[0] * x + m[1] * y;
      const int ny = m[2] * x + m[3] * y;
      const int oc = (nx + ow - 1) / 2;
      const int orow = (ny + oh - 1) / 2;
      for (int ch = 0; ch < src.channels(); ++ch) out.at(ch, orow, oc) = src.at(ch, r, c);
    }
  }
  return out;
}

struct CropSample {
  Image image;
  LabelMask mask;
  int row = 0;  // crop offset in the source
  int col = 0;
  DihedralElement transform;
};

// Uniform crop offset and uniform D4 element, shared by image and mask.
inline CropSample sample_crop(const Image& img, const LabelMask& mask, int size,
                              std::mt19937_64& rng) {
  if (img.height() != mask.height() || img.width() != mask.width()) {
    throw InvalidArgument("image and mask dimensions differ");
  }
  if (size < 1 || size > img.height() || size > img.width()) {
    throw InvalidArgument("crop size exceeds image dimensions");
  }
  CropSample s;
  s.row = std::uniform_int_distribution<int>(0, img.height() - size)(rng);
  s.col = std::uniform_int_distribution<int>(0, img.width() - size)(rng);
  s.transform = DihedralElement(std::uniform_int_distribution<int>(0, 7)(rng));
  const PadSpec window{s.row, img.height() - size - s.row, s.col, img.width() - size - s.col};
  s.image = apply_dihedral(crop_padding(img, window), s.transform);
  s.mask = apply_dihedral(crop_padding(mask, window), s.transform);
  return s;
}

}  // namespace mseg
