// Copyright (c) 2026 scaleflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Coarse-to-fine scale sequences over latent maps, and the down/up operators
// the rest of the model is built on. Down is average pooling, up is
// nearest-neighbor replication; this pair satisfies down(up(x,2),2) == x
// exactly. Bilinear variants sit behind an option for sensitivity runs.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scaleflow/codec.hpp"
#include "scaleflow/nn.hpp"
#include "scaleflow/tensor.hpp"

namespace scaleflow {

struct ScaleSchedule {
  // (h, w) per scale, coarse to fine.
  std::vector<std::pair<int64_t, int64_t>> sizes;

  static ScaleSchedule square(const std::vector<int64_t>& s) {
    ScaleSchedule sched;
    for (int64_t x : s) sched.sizes.emplace_back(x, x);
    sched.validate();
    return sched;
  }

  void validate() const {
    require(!sizes.empty(), "schedule: empty");
    const auto [fh, fw] = sizes.back();
    for (size_t i = 0; i < sizes.size(); ++i) {
      const auto [h, w] = sizes[i];
      require(h >= 1 && w >= 1, "schedule: sizes must be positive");
      require(fh % h == 0 && fw % w == 0, "schedule: scale " + std::to_string(h) + "x" + std::to_string(w) +
                                              " does not divide finest " + std::to_string(fh) + "x" + std::to_string(fw));
      if (i > 0) {
        const auto [ph, pw] = sizes[i - 1];
        require(h > ph && w > pw, "schedule: sizes must be strictly increasing");
        require(h % ph == 0 && w % pw == 0, "schedule: consecutive sizes " + std::to_string(ph) + " -> " +
                                                std::to_string(h) + " need an integer ratio");
      }
    }
  }

  int64_t num_scales() const { return static_cast<int64_t>(sizes.size()); }
  int64_t tokens(int64_t i) const { return sizes[static_cast<size_t>(i)].first * sizes[static_cast<size_t>(i)].second; }

  // Upsampling factor taking scale i-1 to scale i (i >= 1).
  int64_t ratio(int64_t i) const {
    return sizes[static_cast<size_t>(i)].first / sizes[static_cast<size_t>(i - 1)].first;
  }

  // Down factor from the finest scale to scale i.
  int64_t down_factor(int64_t i) const { return sizes.back().first / sizes[static_cast<size_t>(i)].first; }

  // Teacher-forcing input length: the condition token plus one token per
  // position of each upsampled previous scale.
  int64_t ar_input_tokens() const {
    int64_t n = 1;
    for (int64_t i = 1; i < num_scales(); ++i) n += tokens(i);
    return n;
  }

  std::string str() const {
    std::string s = "{";
    for (size_t i = 0; i < sizes.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(sizes[i].first);
      if (sizes[i].second != sizes[i].first) s += "x" + std::to_string(sizes[i].second);
    }
    return s + "}";
  }
};

enum class PyramidFilter { avg_nearest, bilinear };

inline PyramidFilter pyramid_filter_from(const std::string& s) {
  if (s == "avg_nearest") return PyramidFilter::avg_nearest;
  if (s == "bilinear") return PyramidFilter::bilinear;
  throw ConfigError("unknown pyramid filter '" + s + "' (avg_nearest|bilinear)");
}

// Downsample by integer factor r over the trailing two dims.
template <typename T>
Tensor<T> down(const Tensor<T>& x, int64_t r, PyramidFilter filter = PyramidFilter::avg_nearest) {
  if (r == 1) return x;
  require(r >= 1 && x.size(-2) % r == 0 && x.size(-1) % r == 0,
          "down: factor " + std::to_string(r) + " does not divide " + shape_str(x.shape()));
  if (filter == PyramidFilter::avg_nearest) return mean_pool(x, r);
  return bilinear_resize(x, x.size(-2) / r, x.size(-1) / r);
}

// Upsample by integer factor r over the trailing two dims.
template <typename T>
Tensor<T> up(const Tensor<T>& x, int64_t r, PyramidFilter filter = PyramidFilter::avg_nearest) {
  require(r >= 1, "up: factor must be >= 1");
  if (r == 1) return x;
  if (filter == PyramidFilter::avg_nearest) return upsample_nearest(x, r);
  return bilinear_resize(x, x.size(-2) * r, x.size(-1) * r);
}

// Ground-truth token maps, coarse to fine; the finest entry is the source
// latent itself, recomputation from it reproduces every coarser level.
template <typename T>
struct LatentPyramid {
  std::vector<Tensor<T>> scales;
};

// Per-scale conditioning tokens emitted by the autoregressive transformer,
// [B, tokens(i), width] each.
template <typename T>
struct SemanticsSet {
  std::vector<Tensor<T>> per_scale;
};

// F: [c,h,w] or [B,c,h,w] with (h,w) equal to the schedule's finest size.
template <typename T>
LatentPyramid<T> build_pyramid(const Tensor<T>& latent, const ScaleSchedule& schedule,
                               PyramidFilter filter = PyramidFilter::avg_nearest) {
  const auto [fh, fw] = schedule.sizes.back();
  require(latent.size(-2) == fh && latent.size(-1) == fw,
          "build_pyramid: latent " + shape_str(latent.shape()) + " does not end at the schedule's finest size " +
              std::to_string(fh) + "x" + std::to_string(fw));
  LatentPyramid<T> pyr;
  for (int64_t i = 0; i < schedule.num_scales(); ++i) {
    pyr.scales.push_back(down(latent, schedule.down_factor(i), filter));
  }
  return pyr;
}

enum class PyramidMode { latent, image };

inline PyramidMode pyramid_mode_from(const std::string& s) {
  if (s == "latent") return PyramidMode::latent;
  if (s == "image") return PyramidMode::image;
  throw ConfigError("unknown pyramid mode '" + s + "' (latent|image)");
}

// mode latent: encode once, downsample the latent (the default path).
// mode image: downsample the image first, encode per scale.
template <typename T>
LatentPyramid<T> build_pyramid_from_image(const Tensor<T>& image, const LatentCodec<T>& codec,
                                          const ScaleSchedule& schedule, PyramidMode mode,
                                          PyramidFilter filter = PyramidFilter::avg_nearest) {
  if (mode == PyramidMode::latent) {
    return build_pyramid(codec.encode(image), schedule, filter);
  }
  LatentPyramid<T> pyr;
  const int64_t ratio = codec.spatial_ratio();
  const auto [fh, fw] = schedule.sizes.back();
  require(image.size(-2) == fh * ratio && image.size(-1) == fw * ratio,
          "build_pyramid_from_image: image " + shape_str(image.shape()) + " does not match schedule finest " +
              std::to_string(fh) + "x" + std::to_string(fw) + " at codec ratio " + std::to_string(ratio));
  for (int64_t i = 0; i < schedule.num_scales(); ++i) {
    pyr.scales.push_back(codec.encode(down(image, schedule.down_factor(i), filter)));
  }
  return pyr;
}

}  // namespace scaleflow
