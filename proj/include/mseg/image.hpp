#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mseg/errors.hpp"

namespace mseg {

// Class ids used throughout the pipeline.
enum ClassId : std::uint8_t { kBackground = 0, kCell = 1, kBead = 2 };
inline constexpr int kDefaultNumClasses = 3;

// Channel-major raster: `channels` planes of height x width, row-major each.
template <class T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int channels, int height, int width, T fill = T{})
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw InvalidArgument("raster dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }
  Raster(int channels, int height, int width, std::vector<T> data)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    if (channels < 0 || height < 0 || width < 0 ||
        data_.size() != static_cast<std::size_t>(channels) * height * width) {
      throw InvalidArgument("raster data length does not match dimensions");
    }
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& at(int c, int r, int x) { return data_[index(c, r, x)]; }
  const T& at(int c, int r, int x) const { return data_[index(c, r, x)]; }
  T& operator()(int r, int x) { return data_[index(0, r, x)]; }
  const T& operator()(int r, int x) const { return data_[index(0, r, x)]; }

  std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_dims(const Raster& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  friend bool operator==(const Raster& a, const Raster& b) {
    return a.same_dims(b) && a.data_ == b.data_;
  }

 protected:
  std::size_t index(int c, int r, int x) const {
    return (static_cast<std::size_t>(c) * height_ + r) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

// Single-channel intensity image, values in [0,1].
class Image : public Raster<double> {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0) : Raster(1, height, width, fill) {
    check_range();
  }
  Image(int height, int width, std::vector<double> data)
      : Raster(1, height, width, std::move(data)) {
    check_range();
  }

  Image blank(int height, int width) const { return Image(height, width); }

  void check_range() const {
    for (double v : data_) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("image values must lie in [0,1]");
    }
  }
};

// Per-pixel class ids.
class LabelMask : public Raster<std::uint8_t> {
 public:
  LabelMask() = default;
  LabelMask(int height, int width, int num_classes = kDefaultNumClasses)
      : Raster(1, height, width, std::uint8_t{0}), num_classes_(num_classes) {
    check_classes();
  }
  LabelMask(int height, int width, std::vector<std::uint8_t> data,
            int num_classes = kDefaultNumClasses)
      : Raster(1, height, width, std::move(data)), num_classes_(num_classes) {
    check_classes();
  }

  int num_classes() const { return num_classes_; }
  LabelMask blank(int height, int width) const { return LabelMask(height, width, num_classes_); }

  void check_classes() const {
    if (num_classes_ < 1 || num_classes_ > 255) throw InvalidArgument("num_classes out of range");
    for (auto v : data_) {
      if (v >= num_classes_) throw InvalidArgument("label id exceeds num_classes");
    }
  }

  friend bool operator==(const LabelMask& a, const LabelMask& b) {
    return a.num_classes_ == b.num_classes_ &&
           static_cast<const Raster&>(a) == static_cast<const Raster&>(b);
  }

 private:
  int num_classes_ = kDefaultNumClasses;
};

// Per-class softmax scores, one plane per class.
template <class T = double>
class ProbabilityMap : public Raster<T> {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(int num_classes, int height, int width)
      : Raster<T>(num_classes, height, width, T{0}) {}
  ProbabilityMap(int num_classes, int height, int width, std::vector<T> data)
      : Raster<T>(num_classes, height, width, std::move(data)) {}

  int num_classes() const { return this->channels(); }
  ProbabilityMap blank(int height, int width) const {
    return ProbabilityMap(this->channels(), height, width);
  }

  // Checks the simplex invariant for every pixel.
  bool valid(double tol = 1e-6) const {
    const std::size_t n = this->plane_size();
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (int c = 0; c < this->channels(); ++c) {
        const double p = this->data_[c * n + i];
        if (!(p >= 0.0 && p <= 1.0)) return false;
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
  }
};

// 8-bit RGB raster, three planes (r, g, b).
class RgbImage : public Raster<std::uint8_t> {
 public:
  RgbImage() = default;
  RgbImage(int height, int width) : Raster(3, height, width, std::uint8_t{0}) {}
  RgbImage blank(int height, int width) const { return RgbImage(height, width); }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Background violet, cell red, bead green.
inline const std::vector<Rgb>& default_palette() {
  static const std::vector<Rgb> palette{{128, 0, 128}, {255, 0, 0}, {0, 255, 0}};
  return palette;
}

struct PadSpec {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
  friend bool operator==(const PadSpec&, const PadSpec&) = default;
};

struct PreprocessConfig {
  double gamma = 0.8;
  int levels = 256;
  bool normalize = true;
  bool equalize = true;
  bool gamma_correct = true;

  void validate() const {
    if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
    if (levels < 2) throw InvalidArgument("histogram levels must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// Intensity transforms

inline Image normalize_minmax(const Image& img) {
  if (img.empty()) return img;
  const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  Image out = img.blank(img.height(), img.width());
  if (range == 0.0) return out;
  auto& d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = std::clamp((img.data()[i] - lo) / range, 0.0, 1.0);
  }
  return out;
}

// Quantizes to cfg.levels bins, remaps through the normalized CDF, rescales to [0,1].
// A single occupied level (constant image) is returned unchanged.
inline Image equalize_histogram(const Image& img, const PreprocessConfig& cfg) {
  cfg.validate();
  if (img.empty()) return img;
  const int top = cfg.levels - 1;
  std::vector<int> level(img.size());
  std::vector<std::size_t> cdf(cfg.levels, 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    level[i] = static_cast<int>(std::lround(img.data()[i] * top));
    ++cdf[level[i]];
  }
  for (int v = 1; v < cfg.levels; ++v) cdf[v] += cdf[v - 1];

  const std::size_t n = img.size();
  std::size_t cdf_min = 0;
  for (int v = 0; v < cfg.levels; ++v) {
    if (cdf[v] > 0) {
      cdf_min = cdf[v];
      break;
    }
  }
  if (cdf_min == n) return img;

  std::vector<double> remap(cfg.levels);
  for (int v = 0; v < cfg.levels; ++v) {
    const double num = cdf[v] >= cdf_min ? static_cast<double>(cdf[v] - cdf_min) : 0.0;
    const long mapped = std::lround(num / static_cast<double>(n - cdf_min) * top);
    remap[v] = static_cast<double>(mapped) / top;
  }
  Image out = img.blank(img.height(), img.width());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = remap[level[i]];
  return out;
}

inline Image gamma_correct(const Image& img, double gamma) {
  if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
  Image out = img;
  for (double& v : out.data()) v = std::pow(v, gamma);
  return out;
}

// normalize -> equalize -> gamma, each stage switchable.
inline Image preprocess(const Image& img, const PreprocessConfig& cfg) {
  cfg.validate();
  Image out = img;
  if (cfg.normalize) out = normalize_minmax(out);
  if (cfg.equalize) out = equalize_histogram(out, cfg);
  if (cfg.gamma_correct) out = gamma_correct(out, cfg.gamma);
  return out;
}

// ---------------------------------------------------------------------------
// Geometry: padding, tiling, stitching

namespace detail {
inline int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}
}  // namespace detail

// Reflect-101 padding with explicit per-side amounts.
template <class R>
R reflect_pad(const R& src, const PadSpec& pad) {
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) {
    throw InvalidArgument("padding must be non-negative");
  }
  if (pad.top >= src.height() || pad.bottom >= src.height() || pad.left >= src.width() ||
      pad.right >= src.width()) {
    if (pad.top + pad.bottom + pad.left + pad.right > 0) {
      throw InvalidArgument("reflection padding must be smaller than the image dimension");
    }
  }
  const int h = src.height() + pad.top + pad.bottom;
  const int w = src.width() + pad.left + pad.right;
  R out = src.blank(h, w);
  for (int c = 0; c < src.channels(); ++c) {
    for (int r = 0; r < h; ++r) {
      const int sr = detail::reflect101(r - pad.top, src.height());
      for (int x = 0; x < w; ++x) {
        out.at(c, r, x) = src.at(c, sr, detail::reflect101(x - pad.left, src.width()));
      }
    }
  }
  return out;
}

// Symmetric split; odd residues go to bottom/right.
inline PadSpec centered_pad(int height, int width, int target_h, int target_w) {
  if (target_h < height || target_w < width) {
    throw InvalidArgument("pad target smaller than image");
  }
  PadSpec p;
  p.top = (target_h - height) / 2;
  p.bottom = target_h - height - p.top;
  p.left = (target_w - width) / 2;
  p.right = target_w - width - p.left;
  return p;
}

template <class R>
std::pair<R, PadSpec> reflect_pad(const R& src, int target_h, int target_w) {
  const PadSpec pad = centered_pad(src.height(), src.width(), target_h, target_w);
  return {reflect_pad(src, pad), pad};
}

// Pads each dimension up to the next multiple of `tile`.
template <class R>
std::pair<R, PadSpec> reflect_pad_to_multiple(const R& src, int tile) {
  if (tile < 1) throw InvalidArgument("tile size must be positive");
  const auto up = [tile](int v) { return (v + tile - 1) / tile * tile; };
  return reflect_pad(src, up(src.height()), up(src.width()));
}

template <class R>
R crop_padding(const R& src, const PadSpec& pad) {
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) {
    throw InvalidArgument("padding must be non-negative");
  }
  if (pad.top + pad.bottom >= src.height() || pad.left + pad.right >= src.width()) {
    if (pad.top + pad.bottom + pad.left + pad.right > 0) {
      throw InvalidArgument("padding exceeds raster dimensions");
    }
  }
  const int h = src.height() - pad.top - pad.bottom;
  const int w = src.width() - pad.left - pad.right;
  R out = src.blank(h, w);
  for (int c = 0; c < src.channels(); ++c) {
    for (int r = 0; r < h; ++r) {
      std::copy_n(&src.at(c, r + pad.top, pad.left), w, &out.at(c, r, 0));
    }
  }
  return out;
}

template <class R>
struct Tile {
  R raster;
  int x = 0;  // column offset
  int y = 0;  // row offset
};

// Non-overlapping tiles in row-major offset order.
template <class R>
std::vector<Tile<R>> tile(const R& src, int size) {
  if (size < 1) throw InvalidArgument("tile size must be positive");
  if (src.height() % size != 0 || src.width() % size != 0) {
    throw InvalidArgument("image dimensions must be divisible by the tile size");
  }
  std::vector<Tile<R>> tiles;
  for (int y = 0; y < src.height(); y += size) {
    for (int x = 0; x < src.width(); x += size) {
      R t = src.blank(size, size);
      for (int c = 0; c < src.channels(); ++c) {
        for (int r = 0; r < size; ++r) {
          std::copy_n(&src.at(c, y + r, x), size, &t.at(c, r, 0));
        }
      }
      tiles.push_back({std::move(t), x, y});
    }
  }
  return tiles;
}

// Reassembles tiles; they must cover the output exactly once.
template <class R>
R stitch(const std::vector<Tile<R>>& tiles, int out_h, int out_w) {
  if (tiles.empty()) throw InvalidArgument("stitch: no tiles");
  R out = tiles.front().raster.blank(out_h, out_w);
  std::vector<std::uint8_t> cover(static_cast<std::size_t>(out_h) * out_w, 0);
  for (const auto& t : tiles) {
    const R& src = t.raster;
    if (src.channels() != out.channels()) throw InvalidArgument("stitch: channel mismatch");
    if (t.x < 0 || t.y < 0 || t.x + src.width() > out_w || t.y + src.height() > out_h) {
      throw InvalidArgument("stitch: tile outside output");
    }
    for (int r = 0; r < src.height(); ++r) {
      for (int x = 0; x < src.width(); ++x) {
        auto& n = cover[static_cast<std::size_t>(t.y + r) * out_w + t.x + x];
        if (n++ != 0) throw InvalidArgument("stitch: overlapping tiles");
      }
      for (int c = 0; c < src.channels(); ++c) {
        std::copy_n(&src.at(c, r, 0), src.width(), &out.at(c, t.y + r, t.x));
      }
    }
  }
  if (std::find(cover.begin(), cover.end(), 0) != cover.end()) {
    throw InvalidArgument("stitch: tiles leave a gap");
  }
  return out;
}

}  // namespace mseg
