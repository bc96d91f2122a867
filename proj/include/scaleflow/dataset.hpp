// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural dataset of colored geometric shapes. Every class is a
// (shape, hue) pair, so a generated image can be audited against its label by
// recomputing the dominant hue from pixels. Generation is versioned and fully
// determined by (seed, index); the manifest digest is stable across reruns.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "scaleflow/common.hpp"
#include "scaleflow/image_io.hpp"
#include "scaleflow/random.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

constexpr int kDatasetVersion = 1;

struct ShapeClassRule {
  int64_t shape_kind = 0;  // 0 circle, 1 square, 2 triangle, 3 cross
  double hue_deg = 0.0;
  std::string shape_name() const {
    switch (shape_kind % 4) {
      case 0: return "circle";
      case 1: return "square";
      case 2: return "triangle";
      default: return "cross";
    }
  }
};

struct SyntheticSpec {
  int64_t classes = 4;
  int64_t count = 128;
  int64_t size = 16;
  uint64_t seed = 0;

  void validate() const {
    require(classes >= 1 && classes <= 64, "dataset: classes must be in [1,64]");
    require(count >= 1, "dataset: count must be positive");
    require(size >= 8 && size % 4 == 0, "dataset: size must be >= 8 and divisible by 4");
  }
};

inline std::vector<ShapeClassRule> class_rules(int64_t classes) {
  std::vector<ShapeClassRule> rules;
  for (int64_t k = 0; k < classes; ++k) {
    rules.push_back({k % 4, 360.0 * static_cast<double>(k) / static_cast<double>(classes)});
  }
  return rules;
}

template <typename T>
struct Dataset {
  Tensor<T> images;  // [N, 3, S, S]
  std::vector<int64_t> labels;
  SyntheticSpec spec;
  std::vector<ShapeClassRule> rules;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }

  Tensor<T> image(int64_t i) const {
    Tensor<T> one = narrow(images, 0, i, 1);
    return reshape(one, {images.size(1), images.size(2), images.size(3)});
  }
};

namespace detail {

inline bool inside_shape(int64_t kind, double x, double y, double cx, double cy, double r) {
  const double dx = x - cx, dy = y - cy;
  switch (kind % 4) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= r * 0.9 && std::abs(dy) <= r * 0.9;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.55;
    default:  // cross
      return (std::abs(dx) <= r * 0.35 && std::abs(dy) <= r) || (std::abs(dy) <= r * 0.35 && std::abs(dx) <= r);
  }
}

}  // namespace detail

// Renders image i of the set; label is i % classes. 3x3 supersampled.
template <typename T>
void render_shape_image(const SyntheticSpec& spec, int64_t index, T* out /* [3*S*S] */) {
  const int64_t s = spec.size;
  const int64_t label = index % spec.classes;
  const ShapeClassRule rule = class_rules(spec.classes)[static_cast<size_t>(label)];
  Rng rng = Rng::stream(spec.seed, static_cast<uint64_t>(index), 7);

  const double cx = (0.5 + 0.24 * (rng.uniform() - 0.5)) * static_cast<double>(s);
  const double cy = (0.5 + 0.24 * (rng.uniform() - 0.5)) * static_cast<double>(s);
  const double radius = (0.28 + 0.14 * rng.uniform()) * static_cast<double>(s);
  const double hue = rule.hue_deg + 16.0 * (rng.uniform() - 0.5);
  const double sat = 0.88 + 0.08 * (rng.uniform() - 0.5);
  const double val = 0.88 + 0.12 * (rng.uniform() - 0.5);
  const double bg = 0.10 + 0.06 * rng.uniform();

  double fr, fg, fb;
  hsv_to_rgb(hue, sat, val, fr, fg, fb);

  for (int64_t y = 0; y < s; ++y) {
    for (int64_t x = 0; x < s; ++x) {
      double cover = 0;
      for (int sy = 0; sy < 3; ++sy) {
        for (int sx = 0; sx < 3; ++sx) {
          const double px = static_cast<double>(x) + (static_cast<double>(sx) + 0.5) / 3.0;
          const double py = static_cast<double>(y) + (static_cast<double>(sy) + 0.5) / 3.0;
          if (detail::inside_shape(rule.shape_kind, px, py, cx, cy, radius)) cover += 1.0;
        }
      }
      cover /= 9.0;
      const double noise = 0.02 * (rng.uniform() - 0.5);
      double r = bg + cover * (fr - bg) + noise;
      double g = bg + cover * (fg - bg) + noise;
      double b = bg + cover * (fb - bg) + noise;
      out[0 * s * s + y * s + x] = static_cast<T>(std::min(1.0, std::max(0.0, r)));
      out[1 * s * s + y * s + x] = static_cast<T>(std::min(1.0, std::max(0.0, g)));
      out[2 * s * s + y * s + x] = static_cast<T>(std::min(1.0, std::max(0.0, b)));
    }
  }
}

template <typename T>
Dataset<T> synthesize(const SyntheticSpec& spec) {
  spec.validate();
  Dataset<T> ds;
  ds.spec = spec;
  ds.rules = class_rules(spec.classes);
  ds.images = Tensor<T>({spec.count, 3, spec.size, spec.size});
  ds.labels.resize(static_cast<size_t>(spec.count));
  const int64_t stride = 3 * spec.size * spec.size;
  for (int64_t i = 0; i < spec.count; ++i) {
    ds.labels[static_cast<size_t>(i)] = i % spec.classes;
    render_shape_image(spec, i, ds.images.vals().data() + i * stride);
  }
  return ds;
}

// Circular mean of hue over saturated foreground pixels, weighted by
// saturation; -1 when the image has no foreground.
template <typename T>
double dominant_hue(const Tensor<T>& img) {
  require(img.dim() == 3 && img.size(0) == 3, "dominant_hue: image must be [3,H,W]");
  const int64_t h = img.size(1), w = img.size(2);
  double sx = 0, sy = 0, weight = 0;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double hh, ss, vv;
      rgb_to_hsv(img.at({0, y, x}), img.at({1, y, x}), img.at({2, y, x}), hh, ss, vv);
      if (ss > 0.25 && vv > 0.2) {
        const double rad = hh * 3.14159265358979323846 / 180.0;
        sx += ss * std::cos(rad);
        sy += ss * std::sin(rad);
        weight += ss;
      }
    }
  }
  if (weight <= 0) return -1.0;
  double ang = std::atan2(sy, sx) * 180.0 / 3.14159265358979323846;
  if (ang < 0) ang += 360.0;
  return ang;
}

// Nearest class by circular hue distance; -1 when no foreground exists.
template <typename T>
int64_t classify_by_hue(const Tensor<T>& img, const std::vector<ShapeClassRule>& rules) {
  const double hue = dominant_hue(img);
  if (hue < 0) return -1;
  int64_t best = -1;
  double best_d = 1e300;
  for (size_t k = 0; k < rules.size(); ++k) {
    double d = std::abs(hue - rules[k].hue_deg);
    d = std::min(d, 360.0 - d);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int64_t>(k);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// On-disk form: one PPM per image plus a manifest with the class rules, the
// seed and a content digest.

template <typename T>
uint64_t dataset_digest(const Dataset<T>& ds) {
  uint64_t h = 1469598103934665603ull;
  for (int64_t i = 0; i < ds.count(); ++i) {
    auto bytes = encode_ppm(ds.image(i));
    h = fnv1a(bytes.data(), bytes.size(), h);
    int64_t label = ds.labels[static_cast<size_t>(i)];
    h = fnv1a(&label, sizeof(label), h);
  }
  return h;
}

template <typename T>
std::string manifest_text(const Dataset<T>& ds) {
  std::ostringstream os;
  os << "version=" << kDatasetVersion << "\n";
  os << "seed=" << ds.spec.seed << "\n";
  os << "classes=" << ds.spec.classes << "\n";
  os << "count=" << ds.spec.count << "\n";
  os << "size=" << ds.spec.size << "\n";
  for (size_t k = 0; k < ds.rules.size(); ++k) {
    os << "class." << k << "=shape:" << ds.rules[k].shape_name() << " hue:" << ds.rules[k].hue_deg << "\n";
  }
  os << "digest=" << std::hex << std::setw(16) << std::setfill('0') << dataset_digest(ds) << "\n";
  return os.str();
}

template <typename T>
void write_dataset(const Dataset<T>& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (int64_t i = 0; i < ds.count(); ++i) {
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << "_c" << ds.labels[static_cast<size_t>(i)] << ".ppm";
    write_ppm(dir + "/" + name.str(), ds.image(i));
  }
  std::ofstream mf(dir + "/manifest.txt");
  if (!mf) throw IoError("cannot write manifest in " + dir);
  mf << manifest_text(ds);
}

template <typename T>
Dataset<T> load_dataset(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw IoError("no manifest.txt in " + dir);
  SyntheticSpec spec;
  std::string line;
  while (std::getline(mf, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "seed") spec.seed = std::stoull(value);
    else if (key == "classes") spec.classes = std::stoll(value);
    else if (key == "count") spec.count = std::stoll(value);
    else if (key == "size") spec.size = std::stoll(value);
  }
  Dataset<T> ds;
  ds.spec = spec;
  ds.rules = class_rules(spec.classes);
  ds.images = Tensor<T>({spec.count, 3, spec.size, spec.size});
  ds.labels.resize(static_cast<size_t>(spec.count));
  const int64_t stride = 3 * spec.size * spec.size;
  for (int64_t i = 0; i < spec.count; ++i) {
    const int64_t label = i % spec.classes;
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << "_c" << label << ".ppm";
    Tensor<T> img = read_ppm<T>(dir + "/" + name.str());
    require(img.size(1) == spec.size && img.size(2) == spec.size, "load_dataset: image size mismatch in " + dir);
    std::copy(img.vals().begin(), img.vals().end(), ds.images.vals().begin() + i * stride);
    ds.labels[static_cast<size_t>(i)] = label;
  }
  return ds;
}

}  // namespace scaleflow
