#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "mseg/errors.hpp"
#include "mseg/image.hpp"
#include "mseg/imageio.hpp"

namespace mseg {

struct IntRange {
  int min = 0;
  int max = 0;
};

struct SceneSpec {
  int width = 640;
  int height = 480;
  IntRange bead_count{3, 8};
  IntRange cell_count{2, 5};
  int bead_radius = 12;
  IntRange cell_axes{18, 40};  // semi-axis lengths
  double noise_sigma = 0.03;
  double illumination_gradient = 0.1;
  bool overlap_allowed = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (width < 1 || height < 1) throw InvalidArgument("scene dimensions must be positive");
    if (bead_radius < 1 || cell_axes.min < 1) throw InvalidArgument("radii must be >= 1");
    if (cell_axes.max < cell_axes.min) throw InvalidArgument("cell_axes range inverted");
    if (bead_count.min < 0 || cell_count.min < 0 || bead_count.max < bead_count.min ||
        cell_count.max < cell_count.min) {
      throw InvalidArgument("object counts must be non-negative ranges");
    }
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
  }
};

// Analytic footprint of one rendered object.
struct SceneObject {
  ClassId cls = kBead;
  double cy = 0, cx = 0;
  double a = 0, b = 0;  // semi-axes (equal for beads)
  double theta = 0;
  std::vector<double> wobble_amp;  // boundary perturbation harmonics k = 2, 3, ...
  std::vector<double> wobble_phase;

  double extent() const {
    double s = 1.0;
    for (double amp : wobble_amp) s += std::abs(amp);
    return std::max(a, b) * s;
  }

  // Normalized radial coordinate: <= 1 inside the footprint.
  double rho(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    if (cls == kBead) return std::sqrt(dx * dx + dy * dy) / a;
    const double u = dx * std::cos(theta) + dy * std::sin(theta);
    const double v = -dx * std::sin(theta) + dy * std::cos(theta);
    const double phi = std::atan2(v / b, u / a);
    double bound = 1.0;
    for (std::size_t k = 0; k < wobble_amp.size(); ++k) {
      bound += wobble_amp[k] * std::cos(static_cast<double>(k + 2) * phi + wobble_phase[k]);
    }
    return std::hypot(u / a, v / b) / bound;
  }

  bool contains(double y, double x) const { return rho(y, x) <= 1.0; }
};

struct Scene {
  Image image;
  LabelMask mask;
  std::vector<SceneObject> objects;  // painter's order
};

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}
inline int uniform_int(std::mt19937_64& rng, IntRange r) {
  return std::uniform_int_distribution<int>(r.min, r.max)(rng);
}

// Bead intensity relative to background: dark core brightening toward a bright rim.
inline double bead_profile(double rho, double radius) {
  const double rim = std::max(0.0, 1.0 - 2.5 / radius);
  if (rho >= rim) return 0.38;
  return -0.28 + 0.18 * (rho / rim) * (rho / rim);
}

inline bool overlaps(const SceneObject& o, const std::vector<SceneObject>& placed) {
  for (const auto& p : placed) {
    const double d = std::hypot(o.cy - p.cy, o.cx - p.cx);
    if (d < o.extent() + p.extent() + 1.0) return true;
  }
  return false;
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.mask = LabelMask(spec.height, spec.width);

  const int n_cells = detail::uniform_int(rng, spec.cell_count);
  const int n_beads = detail::uniform_int(rng, spec.bead_count);

  // Cells first, beads on top: beads stuck to cells are the common hard case.
  const auto place = [&](SceneObject o) {
    const double ext = o.extent();
    if (2.0 * ext + 1.0 > spec.width || 2.0 * ext + 1.0 > spec.height) {
      throw InvalidArgument("object does not fit the canvas");
    }
    for (int attempt = 0; attempt < 500; ++attempt) {
      o.cy = detail::uniform(rng, ext, spec.height - 1 - ext);
      o.cx = detail::uniform(rng, ext, spec.width - 1 - ext);
      if (spec.overlap_allowed || !detail::overlaps(o, scene.objects)) {
        scene.objects.push_back(o);
        return;
      }
    }
    throw InvalidArgument("cannot place non-overlapping object; canvas too crowded");
  };

  for (int i = 0; i < n_cells; ++i) {
    SceneObject o;
    o.cls = kCell;
    o.a = detail::uniform(rng, spec.cell_axes.min, spec.cell_axes.max);
    o.b = detail::uniform(rng, spec.cell_axes.min, spec.cell_axes.max);
    o.theta = detail::uniform(rng, 0.0, std::numbers::pi);
    for (int k = 0; k < 3; ++k) {
      o.wobble_amp.push_back(detail::uniform(rng, 0.0, 0.07));
      o.wobble_phase.push_back(detail::uniform(rng, 0.0, 2.0 * std::numbers::pi));
    }
    place(o);
  }
  for (int i = 0; i < n_beads; ++i) {
    SceneObject o;
    o.cls = kBead;
    o.a = o.b = spec.bead_radius;
    place(o);
  }

  // Per-cell texture: a few random plane waves.
  struct Wave {
    double ky, kx, phase, amp;
  };
  std::vector<std::vector<Wave>> textures(scene.objects.size());
  for (auto& tex : textures) {
    for (int k = 0; k < 4; ++k) {
      const double f = detail::uniform(rng, 0.35, 0.9);
      const double dir = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
      tex.push_back({f * std::sin(dir), f * std::cos(dir),
                     detail::uniform(rng, 0.0, 2.0 * std::numbers::pi), 0.04});
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  Image img(spec.height, spec.width);
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      double v = 0.5 + spec.illumination_gradient * (static_cast<double>(c) / spec.width - 0.5);
      std::uint8_t label = kBackground;
      for (std::size_t k = 0; k < scene.objects.size(); ++k) {
        const SceneObject& o = scene.objects[k];
        const double rho = o.rho(r, c);
        if (rho > 1.0) continue;
        label = o.cls;
        if (o.cls == kBead) {
          v = 0.5 + detail::bead_profile(rho, o.a);
        } else {
          double t = 0;
          for (const Wave& w : textures[k]) t += w.amp * std::sin(w.ky * r + w.kx * c + w.phase);
          v = (rho > 0.85 ? 0.3 : 0.44) + t;
        }
      }
      v += spec.noise_sigma * noise(rng);
      img(r, c) = std::clamp(v, 0.0, 1.0);
      scene.mask(r, c) = label;
    }
  }
  scene.image = std::move(img);
  return scene;
}

// ---------------------------------------------------------------------------
// Dataset on disk: <root>/{train,val,test}/img_XXXX.pgm + msk_XXXX.pgm, manifest.json

inline nlohmann::json to_json(const SceneSpec& s) {
  return {{"width", s.width},
          {"height", s.height},
          {"bead_count", {s.bead_count.min, s.bead_count.max}},
          {"cell_count", {s.cell_count.min, s.cell_count.max}},
          {"bead_radius", s.bead_radius},
          {"cell_axes", {s.cell_axes.min, s.cell_axes.max}},
          {"noise_sigma", s.noise_sigma},
          {"illumination_gradient", s.illumination_gradient},
          {"overlap_allowed", s.overlap_allowed},
          {"seed", s.seed}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  const auto range = [&](const char* key, IntRange& r) {
    if (j.contains(key)) r = {j.at(key).at(0).get<int>(), j.at(key).at(1).get<int>()};
  };
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  range("bead_count", s.bead_count);
  range("cell_count", s.cell_count);
  s.bead_radius = j.value("bead_radius", s.bead_radius);
  range("cell_axes", s.cell_axes);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.illumination_gradient = j.value("illumination_gradient", s.illumination_gradient);
  s.overlap_allowed = j.value("overlap_allowed", s.overlap_allowed);
  s.seed = j.value("seed", s.seed);
  return s;
}

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

inline std::string pair_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d.pgm", prefix, i);
  return buf;
}

// Seeds are consecutive from `seed`, so the three splits never share one.
inline nlohmann::json generate_dataset(const SceneSpec& spec, SplitCounts counts, std::uint64_t seed,
                                       const std::filesystem::path& root, bool force = false) {
  namespace fs = std::filesystem;
  spec.validate();
  if (counts.train < 0 || counts.val < 0 || counts.test < 0) {
    throw InvalidArgument("split counts must be non-negative");
  }
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw DataError("output directory is not empty: " + root.string());
    fs::remove_all(root);
  }
  nlohmann::json manifest{{"spec", to_json(spec)}, {"seed", seed}, {"splits", nlohmann::json::object()}};
  std::uint64_t next = seed;
  const std::pair<const char*, int> splits[] = {
      {"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
  for (const auto& [name, n] : splits) {
    fs::create_directories(root / name);
    nlohmann::json list = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
      const std::uint64_t s = next++;
      const Scene scene = generate_scene(spec, s);
      const std::string img = pair_name("img", i);
      const std::string msk = pair_name("msk", i);
      io::write_image(root / name / img, scene.image);
      io::write_mask(root / name / msk, scene.mask);
      list.push_back({{"image", std::string(name) + "/" + img},
                      {"mask", std::string(name) + "/" + msk},
                      {"seed", s}});
    }
    manifest["splits"][name] = std::move(list);
  }
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
  return manifest;
}

}  // namespace mseg
