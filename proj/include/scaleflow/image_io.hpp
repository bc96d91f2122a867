// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Binary PPM (P6) image I/O plus color-space helpers. PPM is the canonical
// output format: byte-exact, trivially parseable, diffable.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "scaleflow/common.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

// Image tensor convention: [3, H, W], values in [0, 1].
template <typename T>
std::vector<uint8_t> encode_ppm(const Tensor<T>& image) {
  require(image.dim() == 3 && image.size(0) == 3, "encode_ppm: image must be [3,H,W], got " + shape_str(image.shape()));
  const int64_t h = image.size(1), w = image.size(2);
  std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        double v = static_cast<double>(image.at({c, y, x}));
        v = std::min(1.0, std::max(0.0, v));
        out.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  auto bytes = encode_ppm(image);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

template <typename T>
Tensor<T> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw IoError(path + ": not a binary PPM (P6) file");
  int64_t w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w <= 0 || h <= 0 || maxval != 255) throw IoError(path + ": unsupported PPM header");
  f.get();  // single whitespace after header
  std::vector<char> raw(static_cast<size_t>(3 * w * h));
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!f) throw IoError(path + ": truncated pixel data");
  Tensor<T> img({3, h, w});
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        uint8_t b = static_cast<uint8_t>(raw[static_cast<size_t>((y * w + x) * 3 + c)]);
        img.at_ref({c, y, x}) = static_cast<T>(static_cast<double>(b) / 255.0);
      }
    }
  }
  return img;
}

// Tiles images (all the same size) into a grid, row-major, for inspection.
template <typename T>
Tensor<T> contact_sheet(const std::vector<Tensor<T>>& images, int64_t columns) {
  require(!images.empty(), "contact_sheet: no images");
  require(columns >= 1, "contact_sheet: columns must be positive");
  const int64_t h = images[0].size(1), w = images[0].size(2);
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t rows = (n + columns - 1) / columns;
  Tensor<T> sheet({3, rows * h, columns * w});
  for (int64_t i = 0; i < n; ++i) {
    const auto& img = images[static_cast<size_t>(i)];
    require(img.size(1) == h && img.size(2) == w, "contact_sheet: image sizes differ");
    const int64_t r = i / columns, c = i % columns;
    for (int64_t ch = 0; ch < 3; ++ch) {
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          sheet.at_ref({ch, r * h + y, c * w + x}) = img.at({ch, y, x});
        }
      }
    }
  }
  return sheet;
}

// h in [0, 360), s and v in [0, 1].
inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1) { r1 = c; g1 = x; }
  else if (hp < 2) { r1 = x; g1 = c; }
  else if (hp < 3) { g1 = c; b1 = x; }
  else if (hp < 4) { g1 = x; b1 = c; }
  else if (hp < 5) { r1 = x; b1 = c; }
  else { r1 = c; b1 = x; }
  const double m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = 60.0 * std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = 60.0 * ((b - r) / d + 2.0);
  else h = 60.0 * ((r - g) / d + 4.0);
  if (h < 0) h += 360.0;
}

}  // namespace scaleflow
